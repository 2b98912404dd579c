"""What the weighted fusion learns about its kernels.

With weighted fusion, every frame softmax-mixes the P branch outputs, so
averaging those mixture weights over a dataset says how much each kernel
width actually matters per layer. Because the gate projection starts at
zero, an untrained model reports exactly 1/P everywhere; training moves
the mass around. Rows always sum to 1.

Run it with:  python3 demos/05_kernel_importance.py
"""

import tempfile
from pathlib import Path

from multiconv import (
    DataSpec,
    EncoderConfig,
    TrainConfig,
    build_model,
    generate_dataset,
    kernel_importance,
    load_split,
    train_model,
)
from multiconv.analysis import importance_csv

KERNELS = (3, 7, 11)

workdir = Path(tempfile.mkdtemp(prefix="multiconv-demo-"))
spec = DataSpec(vocab=5, n_train=64, n_dev=16, n_test=8, min_tokens=2,
                max_tokens=5, frames_per_token=8, n_mels=20, seed=3)
generate_dataset(spec, workdir)
train, dev = load_split(workdir, "train"), load_split(workdir, "dev")

cfg = EncoderConfig(dim=16, layers=2, heads=2, d_inter=66, d_ffn=32,
                    conv_block="multiconv", fusion="weighted", kernels=KERNELS,
                    n_mels=spec.n_mels, vocab=spec.vocab, dropout=0.0)
model = build_model(cfg)


def show(label, matrix):
    print(label)
    print(f"  layer   " + "  ".join(f"k={k:<3d}" for k in KERNELS))
    for layer, row in enumerate(matrix):
        cells = "  ".join(f"{v:.3f}" for v in row)
        print(f"  {layer:<6d}  {cells}   (sum {row.sum():.6f})")


show("before training: the zero-initialized gate mixes uniformly",
     kernel_importance(model, dev, max_utts=8))

train_model(model, train, dev, TrainConfig(steps=150, batch_size=8, lr=3e-3,
                                           eval_every=50))
imp = kernel_importance(model, dev, max_utts=8)
show("after 150 steps: the mixture has drifted", imp)

print("csv export:")
print(importance_csv(imp, KERNELS), end="")
