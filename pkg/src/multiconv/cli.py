"""Command line front end.

Subcommands: gen-data, train, eval, analyze diagonality,
analyze gate-importance, param-count, grad-check.

Exit codes: 0 on success, 1 on a usage error (bad flags or arguments),
2 on a runtime failure (missing files, invalid configs, failed checks).
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from . import analysis
from .checkpoint import load_model
from .config import DataSpec, EncoderConfig, TrainConfig
from .data import generate_dataset, load_spec, load_split
from .encoder import build_model
from .errors import ConfigError
from .gradcheck import run_suite
from .training import evaluate, train_model


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; this front end reserves 2 for
    runtime failures, so usage errors exit 1 instead."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _parse_kernels(text: str) -> tuple[int, ...]:
    """argparse type for --kernels; a bad list is a usage error (exit 1)."""
    try:
        kernels = tuple(int(part) for part in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"kernels must be comma-separated integers, got {text!r}") from None
    for k in kernels:
        if k < 1 or k % 2 == 0:
            raise argparse.ArgumentTypeError(
                f"kernel widths must be odd and positive, got {k}")
    if any(b <= a for a, b in zip(kernels, kernels[1:])):
        raise argparse.ArgumentTypeError(
            f"kernel widths must be strictly increasing, got {text!r}")
    return kernels


# flags that map one-to-one onto EncoderConfig fields; None means "not passed"
_FLAG_FIELDS = ("dim", "layers", "heads", "d_inter", "d_ffn",
                "conv_block", "fusion", "kernels", "dropout", "n_mels", "vocab")


def _add_encoder_flags(p: argparse.ArgumentParser, with_data_fields: bool) -> None:
    p.add_argument("--config", type=Path, default=None, metavar="PATH",
                   help="JSON encoder config used as the base; "
                        "explicit shape flags override its fields")
    p.add_argument("--dim", type=int, default=None, help="model width (default 64)")
    p.add_argument("--layers", type=int, default=None, help="encoder depth (default 2)")
    p.add_argument("--heads", type=int, default=None, help="attention heads (default 4)")
    p.add_argument("--d-inter", type=int, default=None,
                   help="conv-block expansion width, 0 means 6*dim (default 0)")
    p.add_argument("--d-ffn", type=int, default=None,
                   help="feed-forward width, 0 means 4*dim (default 0)")
    p.add_argument("--conv-block", choices=("multiconv", "csgu", "conformer"),
                   default=None, help="convolution half-block (default multiconv)")
    p.add_argument("--fusion", choices=("sum", "weighted", "concat", "depth"),
                   default=None, help="multi-kernel fusion rule (default depth)")
    p.add_argument("--kernels", type=_parse_kernels, default=None,
                   help="comma-separated odd increasing widths (default 3,7,11,15)")
    p.add_argument("--dropout", type=float, default=None,
                   help="dropout rate (default 0.1)")
    if with_data_fields:
        p.add_argument("--n-mels", type=int, default=None,
                       help="feature bins (default 80)")
        p.add_argument("--vocab", type=int, default=None,
                       help="token vocabulary size (default 8)")


def _encoder_from_args(args, n_mels: int | None = None,
                       vocab: int | None = None) -> EncoderConfig:
    """Resolve the encoder config for a subcommand.

    A ``--config`` file provides the base when given, and any explicitly
    passed shape flag overrides that single field. Without a file the base
    is a small desk-scale default. ``n_mels``/``vocab`` pinned by a dataset
    must agree with whatever the file and flags resolve to.
    """
    overrides = {name: value for name in _FLAG_FIELDS
                 if (value := getattr(args, name, None)) is not None}
    if args.config is not None:
        cfg = dataclasses.replace(EncoderConfig.load(args.config), **overrides)
    else:
        base = dict(dim=64, layers=2, heads=4, kernels=(3, 7, 11, 15),
                    n_mels=80, vocab=8, seed=getattr(args, "seed", 0))
        if n_mels is not None:
            base["n_mels"] = n_mels
        if vocab is not None:
            base["vocab"] = vocab
        base.update(overrides)
        cfg = EncoderConfig(**base)
    if n_mels is not None and cfg.n_mels != n_mels:
        raise ConfigError(
            f"encoder config has n_mels={cfg.n_mels} but the data uses {n_mels}")
    if vocab is not None and cfg.vocab != vocab:
        raise ConfigError(
            f"encoder config has vocab={cfg.vocab} but the data uses {vocab}")
    return cfg.validate()


def _load_trained(model_dir: Path):
    cfg = EncoderConfig.load(model_dir / "encoder.json")
    model = build_model(cfg)
    load_model(model_dir / "model.mckpt", model)
    return cfg, model


def _cmd_gen_data(args) -> int:
    spec = DataSpec(
        vocab=args.vocab,
        n_train=args.n_train,
        n_dev=args.n_dev,
        n_test=args.n_test,
        min_tokens=args.min_tokens,
        max_tokens=args.max_tokens,
        frames_per_token=args.frames_per_token,
        n_mels=args.n_mels,
        noise_std=args.noise_std,
        seed=args.seed,
    ).validate()
    generate_dataset(spec, args.out, force=args.force)
    print(f"wrote train={spec.n_train} dev={spec.n_dev} test={spec.n_test} "
          f"utterances to {args.out}")
    return 0


def _cmd_train(args) -> int:
    data_spec = load_spec(args.data)
    cfg = _encoder_from_args(args, n_mels=data_spec.n_mels, vocab=data_spec.vocab)
    tcfg = TrainConfig(
        seed=args.seed,
        steps=args.steps,
        batch_size=args.batch_size,
        lr=args.lr,
        clip_norm=args.clip_norm,
        eval_every=args.eval_every,
        target_ter=args.target_ter,
    ).validate()
    train_utts = load_split(args.data, "train")
    dev_utts = load_split(args.data, "dev")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model = build_model(cfg)
    result = train_model(model, train_utts, dev_utts, tcfg, out_dir=out,
                         log=None if args.quiet else print)
    cfg.save(out / "encoder.json")
    tcfg.save(out / "train.json")
    if result.n_infeasible:
        print(f"warning: skipped {result.n_infeasible} utterance passes "
              f"too short for their labels", file=sys.stderr)
    stop = "early-stop" if result.stopped_early else "budget"
    print(f"trained {result.steps_run} steps ({stop})  "
          f"final dev_ter {result.final_dev_ter:.4f}  "
          f"best dev_ter {result.best_dev_ter:.4f} at step {result.best_step}  "
          f"wall {result.wall_seconds:.1f}s")
    return 0


def _cmd_eval(args) -> int:
    cfg, model = _load_trained(Path(args.model))
    data_spec = load_spec(args.data)
    if cfg.vocab != data_spec.vocab or cfg.n_mels != data_spec.n_mels:
        raise ConfigError(
            f"model expects vocab={cfg.vocab} n_mels={cfg.n_mels} but the "
            f"dataset has vocab={data_spec.vocab} n_mels={data_spec.n_mels}")
    utts = load_split(args.data, args.split)
    result = evaluate(model, utts)
    print(f"split={args.split} utterances={result.n_utterances} "
          f"ter={result.ter:.4f} loss={result.loss:.4f}")
    if result.n_infeasible:
        print(f"loss skipped {result.n_infeasible} utterances too short for their labels")
    if args.out:
        Path(args.out).write_text(result.per_utt_csv())
        print(f"wrote {args.out}")
    return 0


def _cmd_diagonality(args) -> int:
    cfg, model = _load_trained(Path(args.model))
    utts = load_split(args.data, args.split)
    matrix = analysis.diagonality_by_layer_head(model, utts, max_utts=args.utts)
    for layer in range(cfg.layers):
        cells = "  ".join(f"h{h}={matrix[layer, h]:.4f}" for h in range(cfg.heads))
        print(f"layer {layer}: {cells}")
    print(f"mean diagonality {matrix.mean():.4f} over {min(args.utts, len(utts))} utterances")
    if args.out:
        Path(args.out).write_text(analysis.diagonality_csv(matrix))
        print(f"wrote {args.out}")
    return 0


def _cmd_gate_importance(args) -> int:
    cfg, model = _load_trained(Path(args.model))
    utts = load_split(args.data, args.split)
    importance = analysis.kernel_importance(model, utts, max_utts=args.utts)
    header = "  ".join(f"k={k}" for k in cfg.kernels)
    print(f"kernel importance ({header})")
    for layer in range(cfg.layers):
        cells = "  ".join(f"{v:.4f}" for v in importance[layer])
        print(f"layer {layer}: {cells}")
    if args.out:
        Path(args.out).write_text(analysis.importance_csv(importance, cfg.kernels))
        print(f"wrote {args.out}")
    return 0


def _cmd_param_count(args) -> int:
    cfg = _encoder_from_args(args)
    info = analysis.param_breakdown(cfg)
    print(f"total parameters      {info['total']:>12,}")
    print(f"  encoder             {info['encoder']:>12,}")
    print(f"    subsampler        {info['subsampler']:>12,}")
    for name, count in info["per_layer"].items():
        print(f"    per-layer {name:<17s}{count:>10,}")
    print(f"  output head         {info['head']:>12,}")
    if args.compare_fusions:
        rows = analysis.fusion_comparison(cfg)
        base = min(r["total"] for r in rows)
        print("fusion totals:")
        for row in rows:
            print(f"  {row['fusion']:<9s}{row['total']:>12,}  (+{row['total'] - base:,})")
    return 0


def _cmd_grad_check(args) -> int:
    results, elapsed = run_suite(seed=args.seed)
    failed = 0
    for r in results:
        mark = "ok " if r.passed else "FAIL"
        print(f"{mark} {r.name:<34s} n={r.size:<5d} max_rel_err={r.max_rel_err:.3e} "
              f"tol={r.tol:.0e}")
        failed += not r.passed
    print(f"{len(results) - failed}/{len(results)} gradient checks passed "
          f"in {elapsed:.1f}s")
    return 0 if failed == 0 else 2


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="multiconv",
                     description="Multi-kernel gated convolution speech encoder")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="render a synthetic utterance corpus")
    spec_defaults = DataSpec()
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--force", action="store_true",
                   help="overwrite a non-empty output directory")
    p.add_argument("--vocab", type=int, default=spec_defaults.vocab)
    p.add_argument("--n-train", type=int, default=spec_defaults.n_train)
    p.add_argument("--n-dev", type=int, default=spec_defaults.n_dev)
    p.add_argument("--n-test", type=int, default=spec_defaults.n_test)
    p.add_argument("--min-tokens", type=int, default=spec_defaults.min_tokens)
    p.add_argument("--max-tokens", type=int, default=spec_defaults.max_tokens)
    p.add_argument("--frames-per-token", type=int, default=spec_defaults.frames_per_token)
    p.add_argument("--n-mels", type=int, default=spec_defaults.n_mels)
    p.add_argument("--noise-std", type=float, default=spec_defaults.noise_std)
    p.add_argument("--seed", type=int, default=spec_defaults.seed)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train a CTC model on a generated corpus")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    _add_encoder_flags(p, with_data_fields=False)
    train_defaults = TrainConfig()
    p.add_argument("--seed", type=int, default=train_defaults.seed,
                   help="training seed; a fresh config also records it as the "
                        "weight-init seed (a --config file keeps its own)")
    p.add_argument("--steps", type=int, default=train_defaults.steps)
    p.add_argument("--batch-size", type=int, default=train_defaults.batch_size)
    p.add_argument("--lr", type=float, default=train_defaults.lr)
    p.add_argument("--clip-norm", type=float, default=train_defaults.clip_norm)
    p.add_argument("--eval-every", type=int, default=train_defaults.eval_every)
    p.add_argument("--target-ter", type=float, default=train_defaults.target_ter,
                   help="stop once dev TER reaches this; negative disables")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="score a trained model on a split")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--split", choices=("train", "dev", "test"), default="dev")
    p.add_argument("--out", type=Path, default=None,
                   help="optional per-utterance CSV path")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("analyze", help="inspect a trained model")
    ana = p.add_subparsers(dest="analysis", required=True, parser_class=_Parser)

    q = ana.add_parser("diagonality", help="attention alignment per layer and head")
    q.add_argument("--data", type=Path, required=True)
    q.add_argument("--model", type=Path, required=True)
    q.add_argument("--split", choices=("train", "dev", "test"), default="dev")
    q.add_argument("--utts", type=int, default=8)
    q.add_argument("--out", type=Path, default=None, help="optional CSV path")
    q.set_defaults(func=_cmd_diagonality)

    q = ana.add_parser("gate-importance", help="learned kernel mixture weights")
    q.add_argument("--data", type=Path, required=True)
    q.add_argument("--model", type=Path, required=True)
    q.add_argument("--split", choices=("train", "dev", "test"), default="dev")
    q.add_argument("--utts", type=int, default=8)
    q.add_argument("--out", type=Path, default=None, help="optional CSV path")
    q.set_defaults(func=_cmd_gate_importance)

    p = sub.add_parser("param-count", help="parameter accounting for a config")
    _add_encoder_flags(p, with_data_fields=True)
    p.add_argument("--compare-fusions", action="store_true",
                   help="also list totals for all four fusion rules")
    p.set_defaults(func=_cmd_param_count)

    p = sub.add_parser("grad-check", help="finite-difference gradient audit")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_grad_check)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # runtime failures exit 2, never a traceback
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
