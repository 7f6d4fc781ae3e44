"""Permutation matching between targets and estimates, and I-replacement.

The matcher is an exhaustive search over all K! assignments (guarded at
K <= 8), which doubles as its own specification. Cost matrices are always
computed on detached numpy values; when estimates are autodiff Tensors the
returned loss is rebuilt differentiably for the winning permutation only,
so gradients flow through the selected assignment.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import permutations as iter_permutations
from typing import Optional, Sequence, Union

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

DEFAULT_TAU = 1e-3
SILENCE_ENERGY_PER_SAMPLE = 1e-12
MAX_EXHAUSTIVE_K = 8

LOSS_KINDS = ("eq2-waveform", "l1-magstft", "l1-mask", "neg-sisnr")

ArrayLike = Union[np.ndarray, Tensor]


@dataclass(frozen=True)
class Permutation:
    """Assignment of estimate indices to targets: target k gets estimate mapping[k]."""

    mapping: tuple
    cost: float

    def __post_init__(self):
        if sorted(self.mapping) != list(range(len(self.mapping))):
            raise ValueError(f"mapping {self.mapping} is not a bijection")


def _as_numpy(x: ArrayLike) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def is_silent(target: ArrayLike) -> bool:
    t = _as_numpy(target).astype(np.float64, copy=False)
    return float(t @ t) <= SILENCE_ENERGY_PER_SAMPLE * t.size


def pairwise_loss_eq2(target, estimate, mix, tau: float = DEFAULT_TAU):
    """Mixture-thresholded log-MSE between one target/estimate waveform pair.

    Silent targets fall back to penalizing estimate energy against the
    mixture floor:
        silent:  10 log10(||est||^2 + tau ||mix||^2)
        active:  10 log10(||target - est||^2 + tau ||target||^2)

    Returns a float for numpy inputs, a Tensor when the estimate is one.
    """
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    t_np = _as_numpy(target).astype(np.float64, copy=False)
    mix_np = _as_numpy(mix).astype(np.float64, copy=False)
    if t_np.shape != _as_numpy(estimate).shape or t_np.shape != mix_np.shape:
        raise ValueError("target, estimate, and mix must share one length")
    mix_energy = float(mix_np @ mix_np)
    if mix_energy == 0.0:
        raise ValueError("all-zero mixture: the silent branch of the loss presumes mix != 0")
    est_t = estimate if isinstance(estimate, Tensor) else Tensor(np.asarray(estimate))
    if is_silent(target):
        err_sq = ad.sum_(ad.square(est_t))
        floor = tau * mix_energy
    else:
        err_sq = ad.sum_(ad.square(ad.subtract(est_t, Tensor(t_np, dtype=est_t.dtype))))
        floor = tau * float(t_np @ t_np)
    loss = ad.scalar_multiply(ad.log10(ad.add(err_sq, floor)), 10.0)
    return loss if isinstance(estimate, Tensor) else loss.item()


def _l1(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.abs(a - b).sum())


def cost_matrix(
    targets: Sequence[ArrayLike],
    estimates: Sequence[ArrayLike],
    kind: str,
    mix: Optional[ArrayLike] = None,
    tau: float = DEFAULT_TAU,
) -> np.ndarray:
    """K x K detached pairwise losses: entry [k, j] scores target k vs estimate j."""
    if kind not in LOSS_KINDS:
        raise ValueError(f"unknown loss kind {kind!r}; expected one of {LOSS_KINDS}")
    k = len(targets)
    if len(estimates) != k:
        raise ValueError(f"need equally many targets and estimates, got {k} vs {len(estimates)}")
    t_np = [_as_numpy(t).astype(np.float64, copy=False) for t in targets]
    e_np = [_as_numpy(e).astype(np.float64, copy=False) for e in estimates]
    costs = np.empty((k, k))
    if kind == "eq2-waveform":
        if mix is None:
            raise ValueError("eq2-waveform matching needs the mixture waveform")
        mix_np = _as_numpy(mix).astype(np.float64, copy=False)
        mix_energy = float(mix_np @ mix_np)
        if mix_energy == 0.0:
            raise ValueError("all-zero mixture: the silent branch of the loss presumes mix != 0")
        if tau <= 0:
            raise ValueError(f"tau must be positive, got {tau}")
        for i in range(k):
            ti = t_np[i]
            t_energy = float(ti @ ti)
            silent = t_energy <= SILENCE_ENERGY_PER_SAMPLE * ti.size
            for j in range(k):
                ej = e_np[j]
                if silent:
                    costs[i, j] = 10.0 * np.log10(float(ej @ ej) + tau * mix_energy)
                else:
                    diff = ti - ej
                    costs[i, j] = 10.0 * np.log10(float(diff @ diff) + tau * t_energy)
    elif kind in ("l1-magstft", "l1-mask"):
        for i in range(k):
            for j in range(k):
                costs[i, j] = _l1(t_np[i], e_np[j])
    else:  # neg-sisnr
        from .metrics import si_snr

        for i in range(k):
            for j in range(k):
                costs[i, j] = -si_snr(t_np[i], e_np[j])
    return costs


def optimal_permutation(
    targets: Sequence[ArrayLike],
    estimates: Sequence[ArrayLike],
    kind: str,
    direction: str = "min",
    mix: Optional[ArrayLike] = None,
    tau: float = DEFAULT_TAU,
) -> Permutation:
    """Exhaustively search all K! assignments; ties go to the smallest mapping."""
    if direction not in ("min", "max"):
        raise ValueError(f"direction must be 'min' or 'max', got {direction!r}")
    k = len(targets)
    if k > MAX_EXHAUSTIVE_K:
        raise ValueError(
            f"K={k} exceeds the exhaustive-search guard ({MAX_EXHAUSTIVE_K}); "
            "raise MAX_EXHAUSTIVE_K deliberately if K! evaluations are acceptable"
        )
    costs = cost_matrix(targets, estimates, kind, mix=mix, tau=tau)
    return permutation_from_costs(costs, direction)


def permutation_from_costs(costs: np.ndarray, direction: str = "min") -> Permutation:
    k = costs.shape[0]
    best_mapping = None
    best_total = None
    rows = np.arange(k)
    for mapping in iter_permutations(range(k)):
        total = float(costs[rows, list(mapping)].sum())
        if best_total is None or (total < best_total if direction == "min" else total > best_total):
            best_total = total
            best_mapping = mapping
    return Permutation(tuple(best_mapping), best_total)


def pit_loss(
    targets: Sequence[ArrayLike],
    estimates: Sequence[ArrayLike],
    mix: ArrayLike,
    tau: float = DEFAULT_TAU,
):
    """Permutation-invariant loss: min over assignments of summed pairwise losses.

    Returns (loss, Permutation). The loss is a Tensor when any estimate is
    one (rebuilt for the winning permutation so gradients flow through it).
    """
    perm = optimal_permutation(targets, estimates, "eq2-waveform", "min", mix=mix, tau=tau)
    tracked = any(isinstance(e, Tensor) for e in estimates)
    if not tracked:
        return perm.cost, perm
    terms = [pairwise_loss_eq2(targets[k], estimates[perm.mapping[k]], mix, tau) for k in range(len(targets))]
    total = terms[0]
    for term in terms[1:]:
        total = ad.add(total, term)
    return total, perm


def i_replacement(
    targets: Sequence[ArrayLike],
    estimates: Sequence[ArrayLike],
    i_count: int,
    kind: str,
    rng: np.random.Generator,
    mix: Optional[ArrayLike] = None,
    tau: float = DEFAULT_TAU,
):
    """Build the fake tuple for a context discriminator.

    Estimates are first aligned to targets by the optimal permutation, then
    I distinct indices are drawn and those entries are replaced by their
    ground-truth targets. Replaced entries are gradient-opaque constants.

    Returns (fakes, lambda_indices, permutation).
    """
    k = len(targets)
    if not 0 <= i_count < k:
        raise ValueError(f"replacement count must satisfy 0 <= I < K, got I={i_count}, K={k}")
    perm = optimal_permutation(targets, estimates, kind, "min", mix=mix, tau=tau)
    aligned = [estimates[perm.mapping[j]] for j in range(k)]
    lam = tuple(sorted(int(v) for v in rng.choice(k, size=i_count, replace=False)))
    tracked = any(isinstance(e, Tensor) for e in estimates)
    fakes = []
    for j in range(k):
        if j in lam:
            t = targets[j]
            if isinstance(t, Tensor):
                fakes.append(t.detach())
            else:
                fakes.append(Tensor(np.asarray(t)) if tracked else np.asarray(t))
        else:
            fakes.append(aligned[j])
    return fakes, lam, perm
