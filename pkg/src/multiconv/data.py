"""Synthetic utterance corpus: token strings rendered as noisy frame templates.

Each vocabulary token owns a frozen Gaussian template over the feature bins.
An utterance is its token templates repeated ``frames_per_token`` times with
fresh Gaussian noise on top, so the mapping from frames to tokens is
learnable but not trivial.

On disk a split is three files:

* ``<split>.f32``  raw little-endian float32 frames, all utterances
  concatenated row-major [total_frames, n_mels]
* ``<split>.json`` manifest: feature geometry plus per-utterance frame
  offsets, lengths, and token ids
* ``<split>.txt``  one line per utterance, ``<id> <tok> <tok> ...``

The generating :class:`~multiconv.config.DataSpec` is stored alongside as
``data_spec.json``. Generation is deterministic in ``spec.seed``; the
templates and each split use independently spawned streams so changing one
split size never perturbs another split.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import DataSpec
from .errors import ContractError, IntegrityError

SPLITS = ("train", "dev", "test")


@dataclass
class Utterance:
    uid: str
    feats: np.ndarray  # [n_frames, n_mels] float32
    tokens: list[int]


def token_templates(spec: DataSpec) -> np.ndarray:
    """The frozen per-token feature templates, shape [vocab, n_mels]."""
    root = np.random.SeedSequence(spec.seed)
    template_ss = root.spawn(4)[0]
    rng = np.random.default_rng(template_ss)
    return rng.normal(0.0, 1.0, size=(spec.vocab, spec.n_mels))


def _render_split(spec: DataSpec, split: str, count: int,
                  templates: np.ndarray, ss: np.random.SeedSequence):
    rng = np.random.default_rng(ss)
    utts: list[Utterance] = []
    for i in range(count):
        n_tokens = int(rng.integers(spec.min_tokens, spec.max_tokens + 1))
        tokens = rng.integers(1, spec.vocab + 1, size=n_tokens)
        clean = np.repeat(templates[tokens - 1], spec.frames_per_token, axis=0)
        noisy = clean + rng.normal(0.0, spec.noise_std, size=clean.shape)
        utts.append(Utterance(
            uid=f"{split}-{i:06d}",
            feats=noisy.astype(np.float32),
            tokens=[int(t) for t in tokens],
        ))
    return utts


def _write_split(out_dir: Path, split: str, utts: list[Utterance], n_mels: int) -> None:
    frames = np.concatenate([u.feats for u in utts], axis=0)
    (out_dir / f"{split}.f32").write_bytes(frames.astype("<f4").tobytes())
    entries = []
    offset = 0
    for u in utts:
        entries.append({
            "id": u.uid,
            "offset": offset,
            "frames": u.feats.shape[0],
            "tokens": u.tokens,
        })
        offset += u.feats.shape[0]
    manifest = {"n_mels": n_mels, "total_frames": offset, "utterances": entries}
    (out_dir / f"{split}.json").write_text(json.dumps(manifest, indent=2) + "\n")
    lines = [" ".join([u.uid] + [str(t) for t in u.tokens]) for u in utts]
    (out_dir / f"{split}.txt").write_text("\n".join(lines) + "\n")


def generate_dataset(spec: DataSpec, out_dir, force: bool = False) -> None:
    """Render and write all three splits plus the spec used to make them.

    Refuses to touch a non-empty output directory unless ``force`` is set.
    """
    spec.validate()
    out = Path(out_dir)
    if not force and out.is_dir() and any(out.iterdir()):
        raise ContractError(
            f"output dir {out} is not empty; pass force to overwrite")
    out.mkdir(parents=True, exist_ok=True)
    root = np.random.SeedSequence(spec.seed)
    template_ss, train_ss, dev_ss, test_ss = root.spawn(4)
    rng = np.random.default_rng(template_ss)
    templates = rng.normal(0.0, 1.0, size=(spec.vocab, spec.n_mels))
    for split, count, ss in (("train", spec.n_train, train_ss),
                             ("dev", spec.n_dev, dev_ss),
                             ("test", spec.n_test, test_ss)):
        _write_split(out, split, _render_split(spec, split, count, templates, ss),
                     spec.n_mels)
    spec.save(out / "data_spec.json")


def load_spec(data_dir) -> DataSpec:
    return DataSpec.load(Path(data_dir) / "data_spec.json")


def load_split(data_dir, split: str) -> list[Utterance]:
    """Read one split back, cross-checking sizes and the text transcripts."""
    if split not in SPLITS:
        raise ContractError(f"split must be one of {SPLITS}, got {split!r}")
    root = Path(data_dir)
    manifest = json.loads((root / f"{split}.json").read_text())
    n_mels = manifest["n_mels"]
    raw = (root / f"{split}.f32").read_bytes()
    frames = np.frombuffer(raw, dtype="<f4")
    expected = manifest["total_frames"] * n_mels
    if frames.size != expected:
        raise IntegrityError(
            f"{split}.f32 holds {frames.size} values, manifest expects {expected}")
    frames = frames.reshape(manifest["total_frames"], n_mels)
    text_tokens: dict[str, list[int]] = {}
    for line in (root / f"{split}.txt").read_text().splitlines():
        parts = line.split()
        text_tokens[parts[0]] = [int(t) for t in parts[1:]]
    utts = []
    for entry in manifest["utterances"]:
        lo = entry["offset"]
        hi = lo + entry["frames"]
        if hi > manifest["total_frames"]:
            raise IntegrityError(f"{split}.json entry {entry['id']} overruns the frame file")
        tokens = [int(t) for t in entry["tokens"]]
        if text_tokens.get(entry["id"]) != tokens:
            raise IntegrityError(
                f"transcript mismatch for {entry['id']} between {split}.json and {split}.txt")
        utts.append(Utterance(
            uid=entry["id"],
            feats=np.ascontiguousarray(frames[lo:hi]),
            tokens=tokens,
        ))
    return utts
