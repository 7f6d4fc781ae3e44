"""The evaluation protocol: SI-SNR, silent-source handling, and the bounds.

Every run is judged against two reference points: the bypass lower bound
(return the mixture at every output, exactly 0 dB improvement by
construction) and the ideal-ratio-mask upper bound computed from ground
truth.
"""
import numpy as np

from advsep.data import GenConfig, make_dataset, example_rng
from advsep.dsp import StftConfig
from advsep.metrics import bypass_report, eval_mixture, ideal_mask_bound, si_snr

gen = GenConfig(sample_rate=8000, duration=1.0, k_max=4, k_min=1, band_preset="disjoint", seed=3)
examples = make_dataset(gen, 24, "demo")
counts = {}
for ex in examples:
    counts[ex.k_active] = counts.get(ex.k_active, 0) + 1
print(f"24 mixtures, sources per mix: {dict(sorted(counts.items()))}")

print("\n== SI-SNR closed forms ==")
s = np.random.default_rng(0).normal(size=4000)
s /= np.linalg.norm(s)
print(f"identity estimate:   {si_snr(s, s):6.2f} dB  (epsilon-capped near 50)")
orth = np.roll(s, 1) - (np.roll(s, 1) @ s) * s
orth /= np.linalg.norm(orth)
print(f"orthogonal estimate: {si_snr(s, orth):6.2f} dB")

print("\n== one mixture in detail ==")
ex = next(e for e in examples if e.k_active >= 2)
record = eval_mixture(list(ex.s), [ex.m.copy() for _ in range(4)], ex.m)
print(f"k_active={record.k_active}, permutation={record.permutation}, "
      f"discarded silent pairs={record.discarded}")
print(f"bypass improvements per retained source: {[round(v, 6) for _, v in record.per_source]}")

print("\n== bounds over the whole set ==")
stft_cfg = StftConfig.desk()
lower = bypass_report(examples)
upper = ideal_mask_bound(examples, stft_cfg)
print(f"bypass lower bound:     SI-SNR_I = {lower.si_snr_i:6.3f} dB, SI-SNR_S = {lower.si_snr_s:.1f} dB")
print(f"ideal ratio-mask bound: SI-SNR_I = {upper.si_snr_i:6.3f} dB, SI-SNR_S = {upper.si_snr_s:.1f} dB")
print("\n(disjoint frequency bands make the oracle masks nearly perfect, which")
print("is what gives the desk-scale tasks their generous headroom)")
