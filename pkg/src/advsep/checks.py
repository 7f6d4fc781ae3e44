"""Fast self-verification suites: autodiff, DSP, permutation, and metric oracles.

Each suite returns CheckResult rows; everything here is designed to finish
in well under ten minutes on one CPU core. The permutation oracle is a
second, independent enumeration so the matcher is never checked against
itself.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import dsp, matching, metrics
from .autodiff import Tensor
from .dsp import StftConfig
from .models import SeparatorConfig, Separator

SUITES = ("grad", "dsp", "perm", "metrics")


@dataclass
class CheckResult:
    suite: str
    name: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        detail = f" ({self.detail})" if self.detail else ""
        return f"[{status}] {self.suite}/{self.name}{detail}"


# ---------------------------------------------------------------------------
# grad suite
# ---------------------------------------------------------------------------


def _primitive_cases(rng):
    other = rng.normal(size=(4, 5))
    w1 = rng.normal(size=(3, 2, 3))
    w2 = rng.normal(size=(2, 2, 3, 3))
    wq, wk, wv = (rng.normal(size=(3, 3)) * 0.5 for _ in range(3))
    return [
        ("add", lambda t: ad.sum_(ad.square(ad.add(t, Tensor(other)))), (4, 5)),
        ("subtract", lambda t: ad.sum_(ad.square(ad.subtract(t, Tensor(other)))), (4, 5)),
        ("multiply", lambda t: ad.sum_(ad.multiply(t, Tensor(other))), (4, 5)),
        ("scalar_multiply", lambda t: ad.sum_(ad.scalar_multiply(t, 1.7)), (4, 5)),
        ("matmul", lambda t: ad.sum_(ad.square(ad.matmul(t, Tensor(other.T)))), (4, 5)),
        ("linear", lambda t: ad.sum_(ad.square(ad.linear(Tensor(other), t))), (3, 4)),
        ("conv1d", lambda t: ad.sum_(ad.square(ad.conv1d(t, Tensor(w1), stride=2, padding=1))), (2, 11)),
        ("conv2d", lambda t: ad.sum_(ad.square(ad.conv2d(t, Tensor(w2), stride=(2, 2), padding=(1, 1)))), (2, 7, 8)),
        ("leaky_relu", lambda t: ad.sum_(ad.square(ad.leaky_relu(t, 0.2))), (4, 5)),
        ("softmax", lambda t: ad.sum_(ad.square(ad.softmax(t, axis=1))), (4, 5)),
        ("log", lambda t: ad.sum_(ad.log(ad.add(ad.square(t), 0.5))), (4, 5)),
        ("log10", lambda t: ad.sum_(ad.log10(ad.add(ad.square(t), 0.5))), (4, 5)),
        ("abs", lambda t: ad.sum_(ad.abs_(t)), (4, 5)),
        ("square", lambda t: ad.sum_(ad.square(t)), (4, 5)),
        ("sum", lambda t: ad.sum_(ad.square(ad.sum_(t, axis=0))), (4, 5)),
        ("mean", lambda t: ad.sum_(ad.square(ad.mean_(t, axis=1))), (4, 5)),
        ("concat", lambda t: ad.sum_(ad.square(ad.concat([t, Tensor(other)], axis=0))), (4, 5)),
        ("slice", lambda t: ad.sum_(ad.square(ad.slice_(t, (slice(0, 3), slice(1, None))))), (4, 5)),
        ("reshape", lambda t: ad.sum_(ad.square(ad.reshape(t, (5, 4)))), (4, 5)),
        ("transpose", lambda t: ad.sum_(ad.square(ad.matmul(ad.transpose(t), t))), (4, 5)),
        ("upsample_linear_2x", lambda t: ad.sum_(ad.square(ad.upsample_linear_2x(t))), (2, 9)),
        ("minimum_zero", lambda t: ad.sum_(ad.minimum_zero(t)), (4, 5)),
        ("self_attention", lambda t: ad.sum_(ad.square(ad.self_attention(t, Tensor(wq), Tensor(wk), Tensor(wv)))), (2, 3, 5)),
    ]


def _istft_case(rng):
    cfg = StftConfig(8000, 32, 8, 32)
    spec = dsp.stft(rng.normal(size=64), cfg)
    im0 = spec.imag.copy()
    probe = rng.normal(size=64)

    def f(t):
        return ad.sum_(ad.multiply(dsp.istft_tensor(t, Tensor(im0), cfg, 64), Tensor(probe)))

    return ("istft", f, spec.real.shape)


def param_grad_check(param: Tensor, build_loss, tol: float = 1e-4, h: float = 1e-5):
    """Central-difference check of d(loss)/d(param) for a module parameter.

    Works in place on the parameter's storage; skips kink coordinates by the
    one-sided disagreement rule, mirroring autodiff.grad_check.
    """
    param.grad = None
    loss = build_loss()
    ad.backward(loss)
    f0 = loss.item()
    g_ad = np.zeros_like(param.data) if param.grad is None else param.grad.copy()
    flat = param.data.reshape(-1)
    max_rel = 0.0
    checked = 0
    for i in range(flat.size):
        orig = flat[i]
        hi = h * (1.0 + abs(orig))
        flat[i] = orig + hi
        with ad.no_grad():
            fp = build_loss().item()
        flat[i] = orig - hi
        with ad.no_grad():
            fm = build_loss().item()
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            return np.inf, 0
        d_r = (fp - f0) / hi
        d_l = (f0 - fm) / hi
        if abs(d_r - d_l) > 0.05 * (1.0 + max(abs(d_r), abs(d_l))):
            continue
        central = (fp - fm) / (2.0 * hi)
        a = g_ad.reshape(-1)[i]
        max_rel = max(max_rel, abs(a - central) / max(abs(a), abs(central), 1e-3))
        checked += 1
    return max_rel, checked


def grad_suite(trials: int = 10) -> list:
    results = []
    rng = np.random.default_rng(2024)
    worst = {}
    for trial in range(trials):
        for name, f, shape in _primitive_cases(rng) + [_istft_case(rng)]:
            report = ad.grad_check(f, rng.normal(size=shape), tol=1e-4)
            prev = worst.get(name, (0.0, True))
            worst[name] = (max(prev[0], report.max_rel_err), prev[1] and report.passed)
    for name, (err, passed) in sorted(worst.items()):
        results.append(CheckResult("grad", f"primitive:{name}", passed, f"max rel err {err:.2e} over {trials} shapes"))

    # full separator loss on a two-source micro-batch, checked per parameter
    cfg = SeparatorConfig(k=2, stft=StftConfig(8000, 32, 8, 32), encoder_channels=(2, 3, 3, 3))
    separator = Separator(cfg, seed=1)
    rng2 = np.random.default_rng(7)
    targets = np.zeros((2, 2, 160))
    targets[:, 0] = rng2.normal(size=(2, 160)) * 0.3
    targets[:, 1] = rng2.normal(size=(2, 160)) * 0.3
    mixes = targets.sum(axis=1)

    def build_loss():
        out = separator.forward(mixes)
        total = None
        for b in range(2):
            est = [ad.slice_(out.est_waves, (b, j)) for j in range(2)]
            loss, _ = matching.pit_loss(list(targets[b]), est, mixes[b])
            total = loss if total is None else ad.add(total, loss)
        return ad.scalar_multiply(total, 0.5)

    worst_err = 0.0
    total_checked = 0
    for name, p in separator.parameters():
        separator.zero_grad()
        err, checked = param_grad_check(p, build_loss)
        worst_err = max(worst_err, err)
        total_checked += checked
    results.append(
        CheckResult(
            "grad",
            "separator_loss",
            worst_err < 1e-4,
            f"max rel err {worst_err:.2e} across {total_checked} coordinates",
        )
    )
    return results


# ---------------------------------------------------------------------------
# dsp suite
# ---------------------------------------------------------------------------


def dsp_suite() -> list:
    results = []
    rng = np.random.default_rng(11)
    cfg = StftConfig.desk()
    worst = 0.0
    for n in (256, 2000, 8000, 8001):
        x = rng.normal(size=n)
        worst = max(worst, float(np.abs(dsp.istft(dsp.stft(x, cfg), cfg, n) - x).max()))
    results.append(CheckResult("dsp", "stft_roundtrip", worst < 1e-8, f"max abs err {worst:.2e}"))

    x1, x2 = rng.normal(size=(2, 3000))
    lin = np.abs(dsp.stft(0.7 * x1 - 1.3 * x2, cfg) - (0.7 * dsp.stft(x1, cfg) - 1.3 * dsp.stft(x2, cfg))).max()
    results.append(CheckResult("dsp", "stft_linearity", lin < 1e-9, f"max abs err {lin:.2e}"))

    est = rng.normal(size=(4, 600))
    mix = rng.normal(size=600)
    once = dsp.mixture_consistency(est, mix)
    residual = float(np.abs(mix - once.sum(axis=0)).max())
    twice = float(np.abs(dsp.mixture_consistency(once, mix) - once).max())
    results.append(CheckResult("dsp", "mixture_consistency_residual", residual < 1e-9, f"residual {residual:.2e}"))
    results.append(CheckResult("dsp", "mixture_consistency_idempotent", twice < 1e-12, f"drift {twice:.2e}"))
    return results


# ---------------------------------------------------------------------------
# perm suite
# ---------------------------------------------------------------------------


def _oracle_assignment(costs, minimize=True):
    best = None
    k = len(costs)
    for perm in itertools.permutations(range(k)):
        total = sum(costs[i][perm[i]] for i in range(k))
        if best is None or (total < best[1] if minimize else total > best[1]):
            best = (perm, total)
    return best


def perm_suite(cases: int = 100) -> list:
    results = []
    rng = np.random.default_rng(23)

    worst = 0.0
    for _ in range(cases):
        targets = [rng.normal(size=48) for _ in range(4)]
        estimates = [rng.normal(size=48) for _ in range(4)]
        mix = np.sum(targets, axis=0)
        base, _ = matching.pit_loss(targets, estimates, mix)
        order = rng.permutation(4)
        shuf_t, _ = matching.pit_loss([targets[i] for i in order], estimates, mix)
        shuf_e, _ = matching.pit_loss(targets, [estimates[i] for i in order], mix)
        worst = max(worst, abs(shuf_t - base), abs(shuf_e - base))
    results.append(CheckResult("perm", "pit_permutation_invariance", worst < 1e-9, f"max deviation {worst:.2e} over {cases} cases"))

    for domain, kind in (("wave", "eq2-waveform"), ("stft", "l1-magstft"), ("mask", "l1-mask")):
        mismatches = 0
        for case in range(cases):
            if domain == "wave":
                targets = [rng.normal(size=48) for _ in range(4)]
                estimates = [rng.normal(size=48) for _ in range(4)]
                mix = np.sum(targets, axis=0)
                costs = [[matching.pairwise_loss_eq2(t, e, mix) for e in estimates] for t in targets]
            else:
                targets = [np.abs(rng.normal(size=(6, 5))) for _ in range(4)]
                estimates = [np.abs(rng.normal(size=(6, 5))) for _ in range(4)]
                mix = None
                costs = [[float(np.abs(t - e).sum()) for e in estimates] for t in targets]
            i_count = int(rng.integers(0, 4))
            draw_seed = int(rng.integers(0, 2**31))
            fakes, lam, perm = matching.i_replacement(
                targets, estimates, i_count, kind, np.random.default_rng(draw_seed), mix=mix
            )
            mapping, _ = _oracle_assignment(costs)
            lam_oracle = tuple(sorted(int(v) for v in np.random.default_rng(draw_seed).choice(4, size=i_count, replace=False)))
            ok = perm.mapping == mapping and lam == lam_oracle
            if ok:
                for j in range(4):
                    expected = targets[j] if j in lam_oracle else estimates[mapping[j]]
                    got = fakes[j].data if hasattr(fakes[j], "data") else fakes[j]
                    ok = ok and np.array_equal(got, expected)
            mismatches += not ok
        results.append(
            CheckResult("perm", f"i_replacement_oracle_{domain}", mismatches == 0, f"{mismatches} mismatches over {cases} cases")
        )
    return results


# ---------------------------------------------------------------------------
# metrics suite
# ---------------------------------------------------------------------------


def metrics_suite() -> list:
    results = []
    rng = np.random.default_rng(31)
    s = rng.normal(size=512)
    s /= np.linalg.norm(s)
    identity = metrics.si_snr(s, s)
    id_err = abs(identity - 10 * math.log10((1 + 1e-5) / 1e-5))
    results.append(CheckResult("metrics", "si_snr_identity", id_err < 0.01, f"{identity:.4f} dB"))

    e = np.zeros(512)
    e[1::2] = 1.0
    sq = np.zeros(512)
    sq[0::2] = 1.0
    e /= np.linalg.norm(e)
    sq /= np.linalg.norm(sq)
    alpha = 1e-5 / (1 + 1e-5)
    expected = 10 * math.log10((alpha**2 + 1e-5) / (alpha**2 + 1 + 1e-5))
    orth = metrics.si_snr(sq, e)
    results.append(CheckResult("metrics", "si_snr_orthogonal", abs(orth - expected) < 0.01, f"{orth:.4f} dB"))
    return results


def run_suite(name: str) -> list:
    if name == "all":
        return grad_suite() + dsp_suite() + perm_suite() + metrics_suite()
    table = {"grad": grad_suite, "dsp": dsp_suite, "perm": perm_suite, "metrics": metrics_suite}
    if name not in table:
        raise ValueError(f"unknown suite {name!r}; choose from {SUITES + ('all',)}")
    return table[name]()
