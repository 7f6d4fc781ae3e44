"""STFT analysis/synthesis, ratio masks, and the mixture-consistency projection.

Spectrograms are stored time-major: (frames, bins) complex arrays with
bins = fft_len // 2 + 1 (one-sided, Nyquist bin kept). Analysis centers each
frame by reflect-padding half a window at the edges, so a length-L signal
yields ceil(L / hop) frames. Synthesis overlap-adds with the same Hann
window and renormalizes by the per-sample sum of squared windows, which
makes istft(stft(x)) exact to rounding.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

EPS_MASK = 1e-12


@dataclass(frozen=True)
class StftConfig:
    sample_rate: int
    window_len: int
    hop: int
    fft_len: int

    def __post_init__(self):
        if self.window_len <= 0 or self.hop <= 0:
            raise ValueError("window_len and hop must be positive")
        if self.window_len % self.hop != 0:
            raise ValueError(f"hop {self.hop} must divide window_len {self.window_len}")
        if self.fft_len < self.window_len:
            raise ValueError(f"fft_len {self.fft_len} must be >= window_len {self.window_len}")

    @property
    def bins(self) -> int:
        return self.fft_len // 2 + 1

    def n_frames(self, n_samples: int) -> int:
        return -(-n_samples // self.hop)

    @staticmethod
    def paper(sample_rate: int = 16000) -> "StftConfig":
        # 32 ms window, hop = window / 4
        win = int(round(0.032 * sample_rate))
        return StftConfig(sample_rate, win, win // 4, win)

    @staticmethod
    def desk(sample_rate: int = 8000) -> "StftConfig":
        return StftConfig(sample_rate, 256, 64, 256)


def hann_window(n: int) -> np.ndarray:
    """Periodic Hann window (w[0] = 0)."""
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(n) / n))


def _frame(x: np.ndarray, cfg: StftConfig) -> np.ndarray:
    half = cfg.window_len // 2
    pad = [(0, 0)] * (x.ndim - 1) + [(half, half)]
    xp = np.pad(x, pad, mode="reflect")
    frames = np.lib.stride_tricks.sliding_window_view(xp, cfg.window_len, axis=-1)
    n = cfg.n_frames(x.shape[-1])
    return frames[..., :: cfg.hop, :][..., :n, :]


def stft(x: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """Analyze a waveform (..., L) into a complex spectrogram (..., frames, bins)."""
    x = np.asarray(x)
    if x.shape[-1] < cfg.window_len:
        raise ValueError(f"signal length {x.shape[-1]} shorter than window {cfg.window_len}")
    if not np.isfinite(x).all():
        raise ValueError("stft input contains non-finite samples")
    frames = _frame(x, cfg) * hann_window(cfg.window_len)
    return np.fft.rfft(frames, n=cfg.fft_len, axis=-1)


def _ola_norm(cfg: StftConfig, n_frames: int) -> np.ndarray:
    """Per-sample sum of squared Hann windows over the padded support."""
    win = hann_window(cfg.window_len)
    pad_len = (n_frames - 1) * cfg.hop + cfg.window_len
    norm = np.zeros(pad_len)
    sq = win * win
    for t in range(n_frames):
        norm[t * cfg.hop : t * cfg.hop + cfg.window_len] += sq
    return norm


def _overlap_add(frames: np.ndarray, cfg: StftConfig) -> np.ndarray:
    n_frames = frames.shape[-2]
    pad_len = (n_frames - 1) * cfg.hop + cfg.window_len
    out = np.zeros(frames.shape[:-2] + (pad_len,), dtype=frames.dtype)
    for t in range(n_frames):
        out[..., t * cfg.hop : t * cfg.hop + cfg.window_len] += frames[..., t, :]
    return out


def istft(spec: np.ndarray, cfg: StftConfig, out_len: int) -> np.ndarray:
    """Invert a complex spectrogram (..., frames, bins) to a waveform (..., out_len)."""
    spec = np.asarray(spec)
    if spec.shape[-1] != cfg.bins:
        raise ValueError(f"spectrogram has {spec.shape[-1]} bins, config expects {cfg.bins}")
    n_frames = spec.shape[-2]
    half = cfg.window_len // 2
    pad_len = (n_frames - 1) * cfg.hop + cfg.window_len
    if out_len > pad_len - half:
        raise ValueError(f"out_len {out_len} exceeds the {pad_len - half} samples covered by {n_frames} frames")
    win = hann_window(cfg.window_len)
    frames = np.fft.irfft(spec, n=cfg.fft_len, axis=-1)[..., : cfg.window_len] * win
    y = _overlap_add(frames, cfg)
    norm = _ola_norm(cfg, n_frames)
    seg = slice(half, half + out_len)
    return y[..., seg] / norm[seg]


def istft_tensor(spec_re, spec_im, cfg: StftConfig, out_len: int) -> Tensor:
    """Differentiable istft on the two real planes of a spectrogram.

    Registered as a single autodiff primitive: the forward pass is the numpy
    istft, the VJP is its adjoint (the whole map is linear in the planes).
    Accepts leading batch axes: (..., frames, bins) -> (..., out_len).
    """
    spec_re = spec_re if isinstance(spec_re, Tensor) else Tensor(spec_re)
    spec_im = spec_im if isinstance(spec_im, Tensor) else Tensor(spec_im)
    if spec_re.shape != spec_im.shape:
        raise ad.ShapeError(f"spectrogram planes differ: {spec_re.shape} vs {spec_im.shape}")
    n_frames = spec_re.shape[-2]
    half = cfg.window_len // 2
    win = hann_window(cfg.window_len)
    norm = _ola_norm(cfg, n_frames)
    inv_norm = 1.0 / norm[half : half + out_len]
    dtype = spec_re.data.dtype
    out = istft(spec_re.data + 1j * spec_im.data, cfg, out_len).astype(dtype, copy=False)
    # one-sided irfft weights: interior bins count twice
    w_bin = np.full(cfg.bins, 2.0 / cfg.fft_len)
    w_bin[0] = 1.0 / cfg.fft_len
    if cfg.fft_len % 2 == 0:
        w_bin[-1] = 1.0 / cfg.fft_len

    def vjp(g):
        gw = g * inv_norm
        pad_len = (n_frames - 1) * cfg.hop + cfg.window_len
        gpad = np.zeros(g.shape[:-1] + (pad_len,), dtype=g.dtype)
        gpad[..., half : half + out_len] = gw
        gf = np.lib.stride_tricks.sliding_window_view(gpad, cfg.window_len, axis=-1)
        gf = gf[..., :: cfg.hop, :][..., :n_frames, :] * win
        spectrum = np.fft.rfft(gf, n=cfg.fft_len, axis=-1)
        return (
            (w_bin * spectrum.real).astype(dtype, copy=False),
            (w_bin * spectrum.imag).astype(dtype, copy=False),
        )

    return ad._record("istft", (spec_re, spec_im), out, vjp)


ad.PRIMITIVES["istft"] = istft_tensor


def ratio_masks(mags: np.ndarray, eps: float = EPS_MASK) -> np.ndarray:
    """Per-bin source weights R_k = |S_k| / sum_j |S_j| for mags (K, frames, bins).

    Bins whose total magnitude falls below eps get the uniform value 1/K.
    """
    mags = np.asarray(mags)
    if mags.ndim != 3:
        raise ValueError(f"expected (K, frames, bins) magnitudes, got shape {mags.shape}")
    k = mags.shape[0]
    denom = mags.sum(axis=0, keepdims=True)
    silent = denom < eps
    with np.errstate(invalid="ignore", divide="ignore"):
        masks = mags / denom
    return np.where(silent, 1.0 / k, masks)


def apply_mask(spec: np.ndarray, masks: np.ndarray) -> np.ndarray:
    """Filter K sources out of a mixture spectrogram: S_k = M * R_k."""
    spec = np.asarray(spec)
    masks = np.asarray(masks)
    if masks.shape[1:] != spec.shape:
        raise ValueError(f"mask shape {masks.shape} does not match spectrogram {spec.shape}")
    return spec[None, :, :] * masks


def mixture_consistency(estimates: np.ndarray, mix: np.ndarray) -> np.ndarray:
    """Shift each estimate by an equal share of the residual so they sum to mix."""
    estimates = np.asarray(estimates, dtype=np.float64)
    mix = np.asarray(mix, dtype=np.float64)
    if estimates.ndim != 2 or estimates.shape[1] != mix.shape[0]:
        raise ValueError(f"estimates {estimates.shape} incompatible with mix length {mix.shape}")
    k = estimates.shape[0]
    residual = mix - estimates.sum(axis=0)
    return estimates + residual / k
