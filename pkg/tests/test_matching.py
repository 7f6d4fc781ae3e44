import itertools
import math

import numpy as np
import pytest

from advsep import autodiff as ad
from advsep import matching
from advsep.autodiff import Tensor
from advsep.matching import (
    Permutation,
    i_replacement,
    optimal_permutation,
    pairwise_loss_eq2,
    pit_loss,
)


# ---------------------------------------------------------------------------
# independent oracles, coded from the loss definitions rather than the library
# ---------------------------------------------------------------------------


def oracle_eq2(s, s_hat, m, tau):
    """Mixture-thresholded log-MSE written independently with norms."""
    if np.linalg.norm(s) ** 2 <= 1e-12 * len(s):
        return 10.0 * math.log10(np.linalg.norm(s_hat) ** 2 + tau * np.linalg.norm(m) ** 2)
    return 10.0 * math.log10(np.linalg.norm(s - s_hat) ** 2 + tau * np.linalg.norm(s) ** 2)


def oracle_best_assignment(cost, minimize=True):
    """Second enumeration over assignments, scored row-by-row."""
    k = len(cost)
    best = None
    for perm in itertools.permutations(range(k)):
        total = sum(cost[row][perm[row]] for row in range(k))
        if best is None:
            best = (perm, total)
        elif minimize and total < best[1]:
            best = (perm, total)
        elif not minimize and total > best[1]:
            best = (perm, total)
    return best


def unit(v):
    return v / np.linalg.norm(v)


# ---------------------------------------------------------------------------
# pairwise_loss_eq2
# ---------------------------------------------------------------------------


def test_perfect_estimate_hits_tau_floor():
    s = unit(np.random.default_rng(0).normal(size=64))
    m = s * 2.0
    assert pairwise_loss_eq2(s, s, m, tau=1e-3) == pytest.approx(-30.0, abs=1e-9)


def test_silent_branch_floor():
    rng = np.random.default_rng(1)
    m = unit(rng.normal(size=64))
    val = pairwise_loss_eq2(np.zeros(64), np.zeros(64), m, tau=1e-3)
    assert val == pytest.approx(-30.0, abs=1e-9)


def test_matches_independent_reimplementation():
    rng = np.random.default_rng(2)
    for _ in range(25):
        s = rng.normal(size=64)
        s_hat = rng.normal(size=64)
        m = rng.normal(size=64)
        tau = float(rng.uniform(1e-4, 1e-2))
        assert pairwise_loss_eq2(s, s_hat, m, tau) == pytest.approx(oracle_eq2(s, s_hat, m, tau), rel=1e-12)
    # silent branch too
    s = np.zeros(64)
    s_hat = rng.normal(size=64)
    m = rng.normal(size=64)
    assert pairwise_loss_eq2(s, s_hat, m, 1e-3) == pytest.approx(oracle_eq2(s, s_hat, m, 1e-3), rel=1e-12)


def test_zero_mixture_rejected():
    with pytest.raises(ValueError, match="mix"):
        pairwise_loss_eq2(np.zeros(8), np.ones(8), np.zeros(8))


def test_invalid_tau_rejected():
    with pytest.raises(ValueError):
        pairwise_loss_eq2(np.ones(8), np.ones(8), np.ones(8), tau=0.0)


def test_tensor_estimate_returns_tensor_with_gradient():
    rng = np.random.default_rng(3)
    s = rng.normal(size=32)
    m = rng.normal(size=32)
    est = Tensor(rng.normal(size=32), requires_grad=True)
    loss = pairwise_loss_eq2(s, est, m)
    assert isinstance(loss, Tensor)
    ad.backward(loss)
    assert est.grad is not None and np.isfinite(est.grad).all()
    report = ad.grad_check(lambda t: pairwise_loss_eq2(s, t, m), est.data, tol=1e-4)
    assert report.passed, report


# ---------------------------------------------------------------------------
# optimal_permutation
# ---------------------------------------------------------------------------


def test_identity_when_estimates_match():
    rng = np.random.default_rng(4)
    targets = [rng.normal(size=40) for _ in range(3)]
    mix = np.sum(targets, axis=0)
    perm = optimal_permutation(targets, targets, "eq2-waveform", mix=mix)
    assert perm.mapping == (0, 1, 2)


def test_swapped_pair_recovers_swap():
    rng = np.random.default_rng(5)
    targets = [rng.normal(size=40), rng.normal(size=40)]
    mix = targets[0] + targets[1]
    perm = optimal_permutation(targets, [targets[1], targets[0]], "eq2-waveform", mix=mix)
    assert perm.mapping == (1, 0)


def test_random_l1_matching_equals_bruteforce():
    rng = np.random.default_rng(6)
    for _ in range(20):
        targets = [rng.normal(size=(6, 5)) for _ in range(4)]
        estimates = [rng.normal(size=(6, 5)) for _ in range(4)]
        perm = optimal_permutation(targets, estimates, "l1-magstft")
        cost = [[float(np.abs(t - e).sum()) for e in estimates] for t in targets]
        mapping, total = oracle_best_assignment(cost)
        assert perm.mapping == mapping
        assert perm.cost == pytest.approx(total, rel=1e-12)


def test_cost_invariant_recomputes():
    rng = np.random.default_rng(7)
    targets = [rng.normal(size=30) for _ in range(3)]
    estimates = [rng.normal(size=30) for _ in range(3)]
    mix = np.sum(targets, axis=0)
    perm = optimal_permutation(targets, estimates, "eq2-waveform", mix=mix)
    recomputed = sum(
        pairwise_loss_eq2(targets[k], estimates[perm.mapping[k]], mix) for k in range(3)
    )
    assert perm.cost == pytest.approx(recomputed, abs=1e-9)


def test_direction_max_equals_min_on_negated_matrix():
    rng = np.random.default_rng(8)
    for _ in range(10):
        costs = rng.normal(size=(4, 4))
        pmax = matching.permutation_from_costs(costs, "max")
        pmin = matching.permutation_from_costs(-costs, "min")
        assert pmax.mapping == pmin.mapping
        assert pmax.cost == pytest.approx(-pmin.cost)


def test_k_guard():
    items = [np.zeros(4) for _ in range(9)]
    with pytest.raises(ValueError, match="guard"):
        optimal_permutation(items, items, "l1-mask")


def test_tie_break_lexicographic():
    costs = np.zeros((3, 3))
    assert matching.permutation_from_costs(costs, "min").mapping == (0, 1, 2)
    assert matching.permutation_from_costs(costs, "max").mapping == (0, 1, 2)


def test_invalid_kind_and_direction():
    items = [np.zeros(4)] * 2
    with pytest.raises(ValueError, match="kind"):
        optimal_permutation(items, items, "l2")
    with pytest.raises(ValueError, match="direction"):
        optimal_permutation(items, items, "l1-mask", direction="down")


# ---------------------------------------------------------------------------
# pit_loss
# ---------------------------------------------------------------------------


def test_shuffled_perfect_estimates():
    rng = np.random.default_rng(9)
    targets = [unit(rng.normal(size=50)) for _ in range(3)]
    mix = np.sum(targets, axis=0)
    shuffle = (2, 0, 1)
    estimates = [targets[i] for i in shuffle]
    loss, perm = pit_loss(targets, estimates, mix, tau=1e-3)
    assert loss == pytest.approx(-90.0, abs=1e-9)
    # inverse of the shuffle: target k sits at estimate position mapping[k]
    assert tuple(shuffle[j] for j in perm.mapping) == (0, 1, 2) or perm.mapping == (1, 2, 0)
    recovered = [estimates[perm.mapping[k]] for k in range(3)]
    for k in range(3):
        np.testing.assert_array_equal(recovered[k], targets[k])


def test_invariant_under_target_and_estimate_shuffles():
    rng = np.random.default_rng(10)
    targets = [rng.normal(size=40) for _ in range(3)]
    estimates = [rng.normal(size=40) for _ in range(3)]
    mix = np.sum(targets, axis=0)
    base, _ = pit_loss(targets, estimates, mix)
    for perm in itertools.permutations(range(3)):
        shuf_t, _ = pit_loss([targets[i] for i in perm], estimates, mix)
        shuf_e, _ = pit_loss(targets, [estimates[i] for i in perm], mix)
        assert shuf_t == pytest.approx(base, abs=1e-9)
        assert shuf_e == pytest.approx(base, abs=1e-9)


def test_pit_equals_bruteforce_and_bounds_identity():
    rng = np.random.default_rng(11)
    for _ in range(10):
        targets = [rng.normal(size=32) for _ in range(3)]
        estimates = [rng.normal(size=32) for _ in range(3)]
        mix = np.sum(targets, axis=0)
        loss, _ = pit_loss(targets, estimates, mix)
        totals = []
        for perm in itertools.permutations(range(3)):
            totals.append(sum(oracle_eq2(targets[k], estimates[perm[k]], mix, 1e-3) for k in range(3)))
        assert loss == pytest.approx(min(totals), abs=1e-9)
        identity_total = sum(oracle_eq2(targets[k], estimates[k], mix, 1e-3) for k in range(3))
        assert loss <= identity_total + 1e-12


# ---------------------------------------------------------------------------
# i_replacement
# ---------------------------------------------------------------------------


def test_no_replacement_returns_aligned_estimates():
    rng = np.random.default_rng(12)
    targets = [rng.normal(size=30) for _ in range(3)]
    estimates = [targets[1], targets[2], targets[0]]
    mix = np.sum(targets, axis=0)
    fakes, lam, perm = i_replacement(targets, estimates, 0, "eq2-waveform", np.random.default_rng(0), mix=mix)
    assert lam == ()
    for k in range(3):
        np.testing.assert_array_equal(fakes[k], targets[k])


def test_swap_with_single_replacement():
    rng = np.random.default_rng(13)
    targets = [rng.normal(size=30), rng.normal(size=30)]
    estimates = [targets[1] + 0.01 * rng.normal(size=30), targets[0] + 0.01 * rng.normal(size=30)]
    mix = np.sum(targets, axis=0)
    # find a seed whose draw is {0}
    seed = next(s for s in range(100) if np.random.default_rng(s).choice(2, size=1, replace=False)[0] == 0)
    fakes, lam, perm = i_replacement(targets, estimates, 1, "eq2-waveform", np.random.default_rng(seed), mix=mix)
    assert lam == (0,)
    assert perm.mapping == (1, 0)
    np.testing.assert_array_equal(fakes[0], targets[0])
    np.testing.assert_array_equal(fakes[1], estimates[perm.mapping[1]])


def test_random_mask_domain_matches_oracle():
    rng = np.random.default_rng(14)
    for trial in range(20):
        targets = [rng.normal(size=(5, 4)) for _ in range(4)]
        estimates = [rng.normal(size=(5, 4)) for _ in range(4)]
        draw = np.random.default_rng(trial)
        fakes, lam, perm = i_replacement(targets, estimates, 3, "l1-mask", draw)
        cost = [[float(np.abs(t - e).sum()) for e in estimates] for t in targets]
        mapping, _ = oracle_best_assignment(cost)
        oracle_draw = np.random.default_rng(trial)
        oracle_lam = tuple(sorted(int(v) for v in oracle_draw.choice(4, size=3, replace=False)))
        assert lam == oracle_lam
        assert perm.mapping == mapping
        for k in range(4):
            expected = targets[k] if k in oracle_lam else estimates[mapping[k]]
            np.testing.assert_array_equal(fakes[k], expected)


def test_k_minus_one_keeps_single_estimate():
    rng = np.random.default_rng(15)
    targets = [rng.normal(size=(3, 3)) for _ in range(4)]
    estimates = [rng.normal(size=(3, 3)) for _ in range(4)]
    fakes, lam, perm = i_replacement(targets, estimates, 3, "l1-magstft", np.random.default_rng(1))
    kept = [k for k in range(4) if k not in lam]
    assert len(kept) == 1
    np.testing.assert_array_equal(fakes[kept[0]], estimates[perm.mapping[kept[0]]])


def test_seeded_draw_is_deterministic():
    rng = np.random.default_rng(16)
    targets = [rng.normal(size=(4, 4)) for _ in range(4)]
    estimates = [rng.normal(size=(4, 4)) for _ in range(4)]
    lam_a = i_replacement(targets, estimates, 2, "l1-mask", np.random.default_rng(77))[1]
    lam_b = i_replacement(targets, estimates, 2, "l1-mask", np.random.default_rng(77))[1]
    assert lam_a == lam_b


def test_replacements_are_gradient_opaque():
    rng = np.random.default_rng(17)
    targets = [rng.normal(size=20) for _ in range(2)]
    mix = np.sum(targets, axis=0)
    estimates = [Tensor(rng.normal(size=20), requires_grad=True) for _ in range(2)]
    fakes, lam, _ = i_replacement(targets, estimates, 1, "eq2-waveform", np.random.default_rng(3), mix=mix)
    replaced = lam[0]
    kept = 1 - replaced
    assert isinstance(fakes[replaced], Tensor) and not fakes[replaced].requires_grad
    assert fakes[kept].requires_grad


def test_replacement_count_bounds():
    items = [np.zeros(4)] * 3
    with pytest.raises(ValueError):
        i_replacement(items, items, 3, "l1-mask", np.random.default_rng(0))
    with pytest.raises(ValueError):
        i_replacement(items, items, -1, "l1-mask", np.random.default_rng(0))


def test_permutation_bijection_enforced():
    with pytest.raises(ValueError):
        Permutation((0, 0, 1), 0.0)
