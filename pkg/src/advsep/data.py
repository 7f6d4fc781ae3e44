"""Synthetic mixture generation and the on-disk dataset convention.

Each example holds a mixture that is exactly the sum of its zero-padded
sources. Sources are band-limited synthetic events (tones, chirps, noise
bands, AM tones, click trains); under the "disjoint" band preset any two
active sources occupy non-overlapping frequency slots, which keeps the
ideal-mask bound high.

Randomness comes from the Philox counter-based 64-bit generator keyed by
(seed, stream), so the same seed and config reproduce a dataset
bit-identically on any platform. Samples are snapped to a 2^-20 grid after
peak normalization; those values are exact in float32 and float64 alike, so
the mixture equals the source sum exactly in either precision and WAV
round-trips are lossless.

Disk layout per example: `<id>/mix.wav` plus `<id>/sources/src_k.wav`
(32-bit float PCM, mono, little-endian), indexed by one `manifest.jsonl`
line per example.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.io import wavfile
from scipy.signal import fftconvolve

QUANT = 2.0**-20
PEAK = 0.9

SOURCE_TYPES = ("tone", "chirp", "band_noise", "am_tone", "click_train")


class DatasetError(Exception):
    """Raised for missing/corrupt files and manifest inconsistencies."""


@dataclass(frozen=True)
class GenConfig:
    sample_rate: int = 8000
    duration: float = 1.0
    k_max: int = 4
    k_min: int = 1
    source_weights: tuple = (1.0, 1.0, 1.0, 1.0, 1.0)
    band_preset: str = "disjoint"  # "disjoint" | "random"
    reverb_rt60: Optional[tuple] = None  # (lo, hi) seconds, off when None
    level_db: tuple = (-10.0, 0.0)
    seed: int = 0

    def __post_init__(self):
        if len(self.source_weights) != len(SOURCE_TYPES):
            raise ValueError(f"need one weight per source type {SOURCE_TYPES}")
        if any(w < 0 for w in self.source_weights) or sum(self.source_weights) <= 0:
            raise ValueError("source weights must be nonnegative with at least one positive")
        if not 1 <= self.k_min <= self.k_max:
            raise ValueError(f"need 1 <= k_min <= k_max, got {self.k_min}..{self.k_max}")
        if self.band_preset not in ("disjoint", "random"):
            raise ValueError(f"unknown band preset {self.band_preset!r}")
        if self.n_samples < 32:
            raise ValueError("duration times sample_rate is too short")

    @property
    def n_samples(self) -> int:
        return int(round(self.duration * self.sample_rate))


@dataclass
class SeparationExample:
    id: str
    m: np.ndarray  # (L,)
    s: np.ndarray  # (k_max, L), zero rows beyond k_active
    k_active: int
    sample_rate: int


def example_rng(seed: int, stream: int) -> np.random.Generator:
    """Philox generator keyed by (seed, stream): one independent stream per example."""
    key = np.array([seed % 2**64, stream % 2**64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _brickwall(x: np.ndarray, lo_hz: float, hi_hz: float, sr: int) -> np.ndarray:
    spec = np.fft.rfft(x)
    freqs = np.fft.rfftfreq(len(x), 1.0 / sr)
    spec[(freqs < lo_hz) | (freqs > hi_hz)] = 0.0
    return np.fft.irfft(spec, n=len(x))


def _usable_range(sr: int) -> tuple:
    return 150.0, 0.45 * sr


def _pick_bands(cfg: GenConfig, k_active: int, rng) -> list:
    lo, hi = _usable_range(cfg.sample_rate)
    if cfg.band_preset == "disjoint":
        gap = 0.02 * cfg.sample_rate
        width = (hi - lo - (cfg.k_max - 1) * gap) / cfg.k_max
        slots = [(lo + i * (width + gap), lo + i * (width + gap) + width) for i in range(cfg.k_max)]
        chosen = rng.permutation(cfg.k_max)[:k_active]
        return [slots[i] for i in chosen]
    bands = []
    for _ in range(k_active):
        width = rng.uniform(0.1, 0.5) * (hi - lo)
        start = rng.uniform(lo, hi - width)
        bands.append((start, start + width))
    return bands


def _synth_source(kind: str, band: tuple, cfg: GenConfig, rng) -> np.ndarray:
    n = cfg.n_samples
    sr = cfg.sample_rate
    t = np.arange(n) / sr
    lo, hi = band
    margin = 0.1 * (hi - lo)
    f_lo, f_hi = lo + margin, hi - margin
    if kind == "tone":
        x = np.sin(2 * np.pi * rng.uniform(f_lo, f_hi) * t + rng.uniform(0, 2 * np.pi))
    elif kind == "chirp":
        f0, f1 = sorted(rng.uniform(f_lo, f_hi, size=2))
        x = np.sin(2 * np.pi * (f0 * t + 0.5 * (f1 - f0) / t[-1] * t * t) + rng.uniform(0, 2 * np.pi))
    elif kind == "band_noise":
        x = rng.standard_normal(n)
    elif kind == "am_tone":
        carrier = np.sin(2 * np.pi * rng.uniform(f_lo, f_hi) * t + rng.uniform(0, 2 * np.pi))
        x = carrier * (0.5 + 0.5 * np.sin(2 * np.pi * rng.uniform(2.0, 20.0) * t + rng.uniform(0, 2 * np.pi)))
    elif kind == "click_train":
        # clamp so at least one click lands inside short clips
        period = min(int(rng.uniform(sr / 40, sr / 5)), max(1, n // 2))
        offset = int(rng.uniform(0, period))
        x = np.zeros(n)
        x[offset::period] = 1.0
    else:
        raise ValueError(f"unknown source type {kind!r}")
    x = _brickwall(x, lo, hi, sr)
    rms = float(np.sqrt(np.mean(x * x)))
    if rms == 0.0:
        raise RuntimeError(f"degenerate {kind} source in band {band}")
    return x / rms


def _exponential_ir(rt60: float, sr: int, rng) -> np.ndarray:
    n = max(8, int(rt60 * sr))
    t = np.arange(n) / sr
    ir = rng.standard_normal(n) * np.exp(-6.9077553 * t / rt60)
    return ir / np.linalg.norm(ir)


def synth_example(cfg: GenConfig, rng: np.random.Generator, example_id: str = "example") -> SeparationExample:
    """Draw one mixture: K' ~ uniform{k_min..k_max} sources, padded to k_max rows."""
    n = cfg.n_samples
    k_active = int(rng.integers(cfg.k_min, cfg.k_max + 1))
    weights = np.asarray(cfg.source_weights, dtype=np.float64)
    weights = weights / weights.sum()
    bands = _pick_bands(cfg, k_active, rng)
    sources = np.zeros((cfg.k_max, n))
    for i in range(k_active):
        kind = SOURCE_TYPES[int(rng.choice(len(SOURCE_TYPES), p=weights))]
        x = _synth_source(kind, bands[i], cfg, rng)
        level = rng.uniform(*cfg.level_db)
        x = x * 10.0 ** (level / 20.0)
        if cfg.reverb_rt60 is not None:
            ir = _exponential_ir(rng.uniform(*cfg.reverb_rt60), cfg.sample_rate, rng)
            x = fftconvolve(x, ir)[:n]
        sources[i] = x
    mix = sources.sum(axis=0)
    peak = np.abs(mix).max()
    if peak > 0:
        sources *= PEAK / peak
    # snap to a grid exact in float32 so the sum identity survives WAV storage
    sources = np.round(sources / QUANT) * QUANT
    mix = sources.sum(axis=0)
    return SeparationExample(id=example_id, m=mix, s=sources, k_active=k_active, sample_rate=cfg.sample_rate)


def make_dataset(cfg: GenConfig, count: int, prefix: str, stream_base: int = 0) -> list:
    """Generate `count` examples with per-example derived Philox streams."""
    return [
        synth_example(cfg, example_rng(cfg.seed, stream_base + i), f"{prefix}_{i:06d}")
        for i in range(count)
    ]


def make_splits(cfg: GenConfig, n_train: int, n_val: int, n_test: int) -> dict:
    """Three disjoint splits with seeds derived as seed + {0, 1, 2}."""
    sizes = {"train": n_train, "val": n_val, "test": n_test}
    out = {}
    for i, (name, count) in enumerate(sizes.items()):
        split_cfg = replace(cfg, seed=cfg.seed + i)
        out[name] = make_dataset(split_cfg, count, prefix=name)
    return out


# ---------------------------------------------------------------------------
# disk I/O
# ---------------------------------------------------------------------------


def _write_wav(path: Path, data: np.ndarray, sr: int) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    wavfile.write(path, sr, data.astype("<f4"))


def _read_wav(path: Path) -> tuple:
    if not path.exists():
        raise DatasetError(f"missing file: {path}")
    try:
        sr, data = wavfile.read(path)
    except Exception as exc:
        raise DatasetError(f"corrupt wav file {path}: {exc}") from exc
    if data.dtype != np.float32:
        raise DatasetError(f"{path}: expected 32-bit float PCM, got {data.dtype}")
    if data.ndim != 1:
        raise DatasetError(f"{path}: expected mono audio, got shape {data.shape}")
    return int(sr), data.astype(np.float64)


def write_example(example: SeparationExample, root: os.PathLike) -> dict:
    """Write `<id>/mix.wav` and the active `sources/src_k.wav`; return the manifest entry."""
    root = Path(root)
    ex_dir = root / example.id
    _write_wav(ex_dir / "mix.wav", example.m, example.sample_rate)
    source_paths = []
    for k in range(example.k_active):
        rel = f"{example.id}/sources/src_{k}.wav"
        _write_wav(root / rel, example.s[k], example.sample_rate)
        source_paths.append(rel)
    return {
        "id": example.id,
        "mix": f"{example.id}/mix.wav",
        "sources": source_paths,
        "sample_rate": example.sample_rate,
        "k_active": example.k_active,
    }


def read_example(ex_dir: os.PathLike, k_max: int = 4) -> SeparationExample:
    """Ingest one example directory, zero-padding the source list to k_max."""
    ex_dir = Path(ex_dir)
    sr, mix = _read_wav(ex_dir / "mix.wav")
    src_dir = ex_dir / "sources"
    files = sorted(src_dir.glob("src_*.wav")) if src_dir.exists() else []
    if not files:
        raise DatasetError(f"no source files under {src_dir}")
    if len(files) > k_max:
        raise DatasetError(f"{ex_dir} has {len(files)} sources, more than k_max={k_max}")
    sources = np.zeros((k_max, len(mix)))
    for k, path in enumerate(files):
        src_sr, data = _read_wav(path)
        if src_sr != sr:
            raise DatasetError(f"sample-rate mismatch: {path} has {src_sr} Hz, mix has {sr} Hz")
        if len(data) != len(mix):
            raise DatasetError(f"length mismatch: {path} has {len(data)} samples, mix has {len(mix)}")
        sources[k] = data
    return SeparationExample(id=ex_dir.name, m=mix, s=sources, k_active=len(files), sample_rate=sr)


def write_dataset(examples: Sequence[SeparationExample], root: os.PathLike) -> Path:
    """Write every example plus a manifest.jsonl; returns the manifest path."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    manifest = root / "manifest.jsonl"
    with open(manifest, "w", encoding="utf-8") as fh:
        for example in examples:
            entry = write_example(example, root)
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
    return manifest


def load_dataset(root: os.PathLike, k_max: int = 4) -> list:
    """Read a dataset directory back through its manifest."""
    root = Path(root)
    manifest = root / "manifest.jsonl"
    if not manifest.exists():
        raise DatasetError(f"missing manifest: {manifest}")
    examples = []
    with open(manifest, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            try:
                entry = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{manifest}:{line_no}: bad JSON: {exc}") from exc
            example = read_example(root / entry["id"], k_max=k_max)
            if example.sample_rate != entry["sample_rate"]:
                raise DatasetError(
                    f"{entry['id']}: manifest says {entry['sample_rate']} Hz, files say {example.sample_rate} Hz"
                )
            if example.k_active != entry["k_active"]:
                raise DatasetError(
                    f"{entry['id']}: manifest says {entry['k_active']} sources, found {example.k_active}"
                )
            examples.append(example)
    return examples
