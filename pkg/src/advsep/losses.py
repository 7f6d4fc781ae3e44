"""Hinge adversarial objectives for discriminators and separator.

Discriminators maximize clamped margins (implemented by minimizing the
negated loss); the separator minimizes the negated scores of its fakes,
optionally combined with a magnitude-balanced PIT term.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

ScoreLike = Union[float, np.ndarray, Tensor]


def _lift_scores(scores: ScoreLike) -> Tensor:
    if isinstance(scores, Tensor):
        return scores
    return Tensor(np.atleast_1d(np.asarray(scores, dtype=np.float64)))


def _tracked(*values) -> bool:
    return any(isinstance(v, Tensor) for v in values)


def _hinge_real(scores: Tensor) -> Tensor:
    # min(0, -1 + D(real)), averaged over however many scores were given
    return ad.mean_(ad.minimum_zero(ad.add(scores, -1.0)))


def _hinge_fake(scores: Tensor) -> Tensor:
    # min(0, -1 - D(fake))
    return ad.mean_(ad.minimum_zero(ad.scalar_multiply(ad.add(scores, 1.0), -1.0)))


def d_loss_instance(real_scores: ScoreLike, fake_scores: ScoreLike):
    """Instance-discriminator objective: per-source hinge terms averaged over K.

    Scores may carry a batch axis; the average then runs over every
    (example, source) score, which equals the batch mean of the per-example
    1/K-averaged loss. The trainer maximizes this value.
    """
    r, f = _lift_scores(real_scores), _lift_scores(fake_scores)
    if r.size != f.size or r.size < 1:
        raise ValueError(f"need equally many real and fake scores, got {r.size} vs {f.size}")
    loss = ad.add(_hinge_real(r), _hinge_fake(f))
    return loss if _tracked(real_scores, fake_scores) else loss.item()


def d_loss_context(real_score: ScoreLike, fake_score: ScoreLike):
    """Context-discriminator objective: one hinge pair per example, no 1/K."""
    r, f = _lift_scores(real_score), _lift_scores(fake_score)
    if r.size != f.size:
        raise ValueError(f"need equally many real and fake scores, got {r.size} vs {f.size}")
    loss = ad.add(_hinge_real(r), _hinge_fake(f))
    return loss if _tracked(real_score, fake_score) else loss.item()


def g_adversarial_loss(contributions: Sequence[tuple]):
    """Separator loss from frozen discriminators.

    Each contribution is ("instance", scores-of-K-fakes) or
    ("context", score-of-the-I-replaced-tuple); the loss sums -mean(scores)
    for instance terms and -score for context terms.
    """
    if not contributions:
        raise ValueError("at least one discriminator contribution is required")
    total = None
    tracked = False
    for tag, scores in contributions:
        if tag not in ("instance", "context"):
            raise ValueError(f"contribution tag must be 'instance' or 'context', got {tag!r}")
        tracked = tracked or isinstance(scores, Tensor)
        term = ad.scalar_multiply(ad.mean_(_lift_scores(scores)), -1.0)
        total = term if total is None else ad.add(total, term)
    return total if tracked else total.item()


@dataclass
class LambdaState:
    """EMA state for balancing the PIT term against the adversarial loss."""

    beta: float = 0.99
    delta: float = 1e-8
    lo: float = 1e-3
    hi: float = 1e3
    ema: Optional[float] = None

    def __post_init__(self):
        if not 0.0 <= self.beta < 1.0:
            raise ValueError(f"EMA decay must be in [0, 1), got {self.beta}")
        if self.lo > self.hi:
            raise ValueError("clamp bounds are inverted")


def combine_with_pit(g_loss, pit, state: LambdaState):
    """total = g_loss + lambda * pit with lambda = clamp(EMA(|g| / (|pit| + delta))).

    The magnitude ratio uses detached values only, so no gradient flows
    through lambda itself.
    """
    g_val = g_loss.item() if isinstance(g_loss, Tensor) else float(g_loss)
    pit_val = pit.item() if isinstance(pit, Tensor) else float(pit)
    raw = abs(g_val) / (abs(pit_val) + state.delta)
    state.ema = raw if state.ema is None else state.beta * state.ema + (1.0 - state.beta) * raw
    lam = float(np.clip(state.ema, state.lo, state.hi))
    if _tracked(g_loss, pit):
        g_t = g_loss if isinstance(g_loss, Tensor) else Tensor(np.atleast_1d(g_loss))
        total = ad.add(g_t, ad.scalar_multiply(pit if isinstance(pit, Tensor) else Tensor(np.atleast_1d(pit)), lam))
    else:
        total = g_val + lam * pit_val
    return total, lam


@dataclass
class AdvLossReport:
    """Scalar loss components of one training step."""

    d_loss_total: dict = field(default_factory=dict)
    d_loss_real: dict = field(default_factory=dict)
    d_loss_fake: dict = field(default_factory=dict)
    g_loss: float = 0.0
    pit: Optional[float] = None
    lam: Optional[float] = None
    total_sep_loss: float = 0.0
