"""Parameter accounting across the four fusion rules.

The fusion rules differ only inside the gating unit, so their cost
separates cleanly: counting parameters at the reference geometry
(d=256, 12 layers, d_inter=1536, kernels 7/15/23/31) shows sum and concat
almost tied, weighted a whisker above, and depth costing one extra wide
depthwise convolution per layer. The deltas match closed-form formulas
exactly, which the test suite also pins down:

  weighted - sum    = layers * (d' * P + P)            d' = d_inter / 2
  depth  - concat   = layers * (d' * max(k) + d')

Run it with:  python3 demos/06_param_accounting.py
"""

from multiconv import EncoderConfig, fusion_comparison, param_breakdown

cfg = EncoderConfig(dim=256, layers=12, heads=4, d_inter=1536,
                    conv_block="multiconv", fusion="depth",
                    kernels=(7, 15, 23, 31), n_mels=80, vocab=8)

# 1. one variant in full
info = param_breakdown(cfg)
print(f"breakdown for fusion={cfg.fusion}")
print(f"  total        {info['total']:>12,}")
print(f"  encoder      {info['encoder']:>12,}")
print(f"  subsampler   {info['subsampler']:>12,}")
for name, count in info["per_layer"].items():
    print(f"  per layer {name:<17s}{count:>10,}")
print(f"  output head  {info['head']:>12,}")

# 2. all four fusions side by side
rows = fusion_comparison(cfg)
totals = {row["fusion"]: row["total"] for row in rows}
print("\nfusion totals at the reference geometry")
for row in rows:
    print(f"  {row['fusion']:<9s}{row['total']:>12,}")

half = cfg.inter_width // 2
p = len(cfg.kernels)
formula_ws = cfg.layers * (half * p + p)
formula_dc = cfg.layers * (half * max(cfg.kernels) + half)
print(f"\nweighted - sum   = {totals['weighted'] - totals['sum']:,} "
      f"(formula {formula_ws:,})")
print(f"depth - concat   = {totals['depth'] - totals['concat']:,} "
      f"(formula {formula_dc:,})")
assert totals["weighted"] - totals["sum"] == formula_ws
assert totals["depth"] - totals["concat"] == formula_dc
