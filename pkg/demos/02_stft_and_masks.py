"""STFT analysis/synthesis, ratio masks, and mixture consistency."""
import numpy as np

from advsep import dsp
from advsep.dsp import StftConfig

cfg = StftConfig.desk()  # 8 kHz, 32 ms window, hop = window/4
rng = np.random.default_rng(0)

print("== frame counts ==")
x = rng.normal(size=8000)
spec = dsp.stft(x, cfg)
print(f"1 s at 8 kHz -> {spec.shape[0]} frames x {spec.shape[1]} bins")
paper = StftConfig.paper()
print(f"paper scale (10 s at 16 kHz) -> {dsp.stft(np.zeros(160000), paper).shape}")

print("\n== round trip ==")
back = dsp.istft(spec, cfg, len(x))
print(f"istft(stft(x)) max abs error: {np.abs(back - x).max():.2e}")

print("\n== ratio masks filter sources from the mix ==")
t = np.arange(8000) / cfg.sample_rate
low = np.sin(2 * np.pi * 440 * t)
high = np.sin(2 * np.pi * 2500 * t)
mix = low + high
mags = np.abs(dsp.stft(np.stack([low, high]), cfg))
masks = dsp.ratio_masks(mags)
print(f"masks sum to one per bin: max deviation {np.abs(masks.sum(axis=0) - 1).max():.2e}")
est_specs = dsp.apply_mask(dsp.stft(mix, cfg), masks)
estimates = dsp.istft(est_specs, cfg, len(mix))
from advsep.metrics import si_snr

print(f"ideal-mask estimate of the 440 Hz tone: {si_snr(low, estimates[0]):.1f} dB SI-SNR "
      f"(vs {si_snr(low, mix):.1f} dB for the raw mix)")

print("\n== mixture consistency projection ==")
rough = estimates + rng.normal(size=estimates.shape) * 0.05
projected = dsp.mixture_consistency(rough, mix)
print(f"before: |mix - sum| = {np.abs(mix - rough.sum(axis=0)).max():.3f}")
print(f"after:  |mix - sum| = {np.abs(mix - projected.sum(axis=0)).max():.2e}")
twice = dsp.mixture_consistency(projected, mix)
print(f"idempotent: second application moves estimates by {np.abs(twice - projected).max():.2e}")
