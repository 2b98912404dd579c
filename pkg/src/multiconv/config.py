"""Configuration records for models, data synthesis, and training.

Each record is a frozen dataclass with ``save``/``load`` JSON helpers. The
JSON round trip is exact: ints stay ints, floats go through repr, and loads
reject unknown keys so stale files fail loudly instead of half-applying.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError

_CONV_BLOCKS = ("multiconv", "csgu", "conformer")
_FUSIONS = ("sum", "weighted", "concat", "depth")


def _load_into(cls, raw: dict, path):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(raw) - set(fields)
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)} for {cls.__name__}")
    missing = set(fields) - set(raw)
    if missing:
        raise ConfigError(f"{path}: missing keys {sorted(missing)} for {cls.__name__}")
    coerced = {}
    for name, value in raw.items():
        if fields[name].type == "tuple[int, ...]":
            value = tuple(int(v) for v in value)
        coerced[name] = value
    return cls(**coerced)


class _JsonMixin:
    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        for key, value in out.items():
            if isinstance(value, tuple):
                out[key] = list(value)
        return out

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path):
        raw = json.loads(Path(path).read_text())
        cfg = _load_into(cls, raw, path)
        cfg.validate()
        return cfg


@dataclass(frozen=True)
class EncoderConfig(_JsonMixin):
    """Shape of the speech encoder.

    ``d_inter`` (gating-unit expansion width) and ``d_ffn`` (feed-forward
    hidden width) of 0 mean "use the defaults" of 6x and 4x the model dim.
    ``kernels`` lists the branch kernel widths for the multi-kernel block;
    the single-kernel baselines use the widest entry.
    """

    dim: int = 256
    layers: int = 12
    heads: int = 4
    d_inter: int = 0
    d_ffn: int = 0
    conv_block: str = "multiconv"
    fusion: str = "depth"
    kernels: tuple[int, ...] = (7, 15, 23, 31)
    n_mels: int = 80
    vocab: int = 8
    dropout: float = 0.1
    seed: int = 0

    @property
    def inter_width(self) -> int:
        return self.d_inter if self.d_inter else 6 * self.dim

    @property
    def ffn_width(self) -> int:
        return self.d_ffn if self.d_ffn else 4 * self.dim

    def validate(self) -> "EncoderConfig":
        if self.dim < 1 or self.layers < 1 or self.heads < 1:
            raise ConfigError("dim, layers, and heads must be positive")
        if self.dim % self.heads:
            raise ConfigError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.inter_width % 2:
            raise ConfigError(f"d_inter must be even, got {self.inter_width}")
        if self.conv_block not in _CONV_BLOCKS:
            raise ConfigError(f"conv_block must be one of {_CONV_BLOCKS}, got {self.conv_block!r}")
        if self.fusion not in _FUSIONS:
            raise ConfigError(f"fusion must be one of {_FUSIONS}, got {self.fusion!r}")
        if not self.kernels:
            raise ConfigError("kernels must be non-empty")
        for k in self.kernels:
            if k < 1 or k % 2 == 0:
                raise ConfigError(f"kernel widths must be odd and positive, got {k}")
        if any(b <= a for a, b in zip(self.kernels, self.kernels[1:])):
            raise ConfigError(f"kernel widths must be strictly increasing, got {self.kernels}")
        if (self.conv_block == "multiconv" and self.fusion in ("concat", "depth")
                and (self.inter_width // 2) % len(self.kernels)):
            raise ConfigError(
                f"{self.fusion} fusion needs the kernel count {len(self.kernels)} "
                f"to divide the half width {self.inter_width // 2}")
        if self.n_mels < 7:
            raise ConfigError("n_mels must be at least 7 for the two conv stages")
        if self.vocab < 1:
            raise ConfigError("vocab must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")
        return self


@dataclass(frozen=True)
class DataSpec(_JsonMixin):
    """Recipe for the synthetic token-to-frames dataset."""

    vocab: int = 8
    n_train: int = 2000
    n_dev: int = 200
    n_test: int = 200
    min_tokens: int = 3
    max_tokens: int = 10
    frames_per_token: int = 12
    n_mels: int = 80
    noise_std: float = 0.3
    seed: int = 0

    def validate(self) -> "DataSpec":
        if self.vocab < 1:
            raise ConfigError("vocab must be positive")
        if self.n_train < 1 or self.n_dev < 1 or self.n_test < 1:
            raise ConfigError("split sizes must be positive")
        if not 1 <= self.min_tokens <= self.max_tokens:
            raise ConfigError("need 1 <= min_tokens <= max_tokens")
        if self.frames_per_token < 1:
            raise ConfigError("frames_per_token must be positive")
        if self.min_tokens * self.frames_per_token < 7:
            raise ConfigError("shortest utterance must reach the 7-frame subsampler floor")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be non-negative")
        return self


@dataclass(frozen=True)
class TrainConfig(_JsonMixin):
    """Optimization settings for CTC training."""

    seed: int = 0
    steps: int = 2000
    batch_size: int = 16
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    clip_norm: float = 5.0
    eval_every: int = 50
    target_ter: float = -1.0

    def validate(self) -> "TrainConfig":
        if self.steps < 1 or self.batch_size < 1:
            raise ConfigError("steps and batch_size must be positive")
        # lr of exactly zero is legal: it freezes the parameters, which is
        # useful for harness checks
        if self.lr < 0 or self.eps <= 0:
            raise ConfigError("lr must be non-negative and eps positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("betas must be in [0, 1)")
        if self.clip_norm <= 0:
            raise ConfigError("clip_norm must be positive")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be positive")
        return self

    @property
    def early_stop_ter(self) -> float | None:
        return self.target_ter if self.target_ter >= 0 else None
