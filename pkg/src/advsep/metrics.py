"""Scale-invariant SNR metrics and the separation evaluation protocol.

Estimates are aligned to targets by the permutation maximizing summed
SI-SNR (silent targets participate in the matching, their pairs are
discarded afterwards). Single-source mixtures report SI-SNR_S; mixtures
with two to four sources report per-source SI-SNR improvement over the
bypass baseline of returning the mixture.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import dsp
from .matching import is_silent, optimal_permutation
from .dsp import StftConfig

EPSILON = 1e-5


def si_snr(target: np.ndarray, estimate: np.ndarray, eps: float = EPSILON) -> float:
    """Scale-invariant SNR in dB, regularized so silences stay finite."""
    s = np.asarray(target, dtype=np.float64)
    s_hat = np.asarray(estimate, dtype=np.float64)
    if s.shape != s_hat.shape:
        raise ValueError(f"length mismatch: {s.shape} vs {s_hat.shape}")
    alpha = (float(s @ s_hat) + eps) / (float(s @ s) + eps)
    scaled = alpha * s
    num = float(scaled @ scaled) + eps
    err = scaled - s_hat
    den = float(err @ err) + eps
    return 10.0 * math.log10(num / den)


@dataclass
class MixtureRecord:
    k_active: int
    permutation: tuple
    per_source: list  # (target index, dB value) for retained pairs
    discarded: int
    single_source: bool

    def to_dict(self) -> dict:
        return {
            "k_active": self.k_active,
            "permutation": list(self.permutation),
            "per_source": [[k, v] for k, v in self.per_source],
            "discarded": self.discarded,
            "single_source": self.single_source,
        }


def eval_mixture(targets, estimates, mix) -> MixtureRecord:
    """Score one mixture: align, discard silent-target pairs, record dB values."""
    targets = [np.asarray(t, dtype=np.float64) for t in targets]
    estimates = [np.asarray(e, dtype=np.float64) for e in estimates]
    mix = np.asarray(mix, dtype=np.float64)
    if len(targets) != len(estimates):
        raise ValueError(f"need K estimates for K targets, got {len(estimates)} vs {len(targets)}")
    silent = [is_silent(t) for t in targets]
    active = [k for k, s in enumerate(silent) if not s]
    if not active:
        raise ValueError("malformed example: every target is silent")
    perm = optimal_permutation(targets, estimates, "neg-sisnr", "min")
    aligned = [estimates[perm.mapping[k]] for k in range(len(targets))]
    single = len(active) == 1
    per_source = []
    for k in active:
        value = si_snr(targets[k], aligned[k])
        if not single:
            value -= si_snr(targets[k], mix)
        per_source.append((k, value))
    return MixtureRecord(
        k_active=len(active),
        permutation=perm.mapping,
        per_source=per_source,
        discarded=len(targets) - len(active),
        single_source=single,
    )


@dataclass
class EvalReport:
    si_snr_s: Optional[float]
    si_snr_i: Optional[float]
    counts: dict
    per_mixture: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "si_snr_s": self.si_snr_s,
            "si_snr_i": self.si_snr_i,
            "counts": self.counts,
            "per_mixture": [r.to_dict() for r in self.per_mixture],
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, **kwargs)


def aggregate(records: Sequence[MixtureRecord]) -> EvalReport:
    """Average SI-SNR_S over single-source mixes and SI-SNR_I over retained pairs."""
    if not records:
        raise ValueError("cannot aggregate an empty record list")
    single_vals = [v for r in records if r.single_source for _, v in r.per_source]
    multi_vals = [v for r in records if not r.single_source for _, v in r.per_source]
    counts = {
        "n_mixtures": len(records),
        "n_single": sum(r.single_source for r in records),
        "n_multi": sum(not r.single_source for r in records),
        "n_retained_pairs": sum(len(r.per_source) for r in records),
        "n_discarded": sum(r.discarded for r in records),
    }
    return EvalReport(
        si_snr_s=float(np.mean(single_vals)) if single_vals else None,
        si_snr_i=float(np.mean(multi_vals)) if multi_vals else None,
        counts=counts,
        per_mixture=list(records),
    )


def _unpack(example) -> tuple:
    if hasattr(example, "m") and hasattr(example, "s"):
        return np.asarray(example.m), np.asarray(example.s)
    mix, targets = example
    return np.asarray(mix), np.asarray(targets)


def ideal_mask_bound(dataset, stft_cfg: StftConfig) -> EvalReport:
    """Oracle upper bound: estimates from ground-truth ratio masks of |S_k|."""
    records = []
    for example in dataset:
        mix, targets = _unpack(example)
        spec = dsp.stft(mix, stft_cfg)
        mags = np.abs(dsp.stft(targets, stft_cfg))
        masks = dsp.ratio_masks(mags)
        est_specs = dsp.apply_mask(spec, masks)
        estimates = dsp.istft(est_specs, stft_cfg, len(mix))
        records.append(eval_mixture(list(targets), list(estimates), mix))
    return aggregate(records)


def bypass_report(dataset) -> EvalReport:
    """Lower bound: every estimate is the input mixture."""
    records = []
    for example in dataset:
        mix, targets = _unpack(example)
        estimates = [mix.copy() for _ in range(len(targets))]
        records.append(eval_mixture(list(targets), estimates, mix))
    return aggregate(records)
