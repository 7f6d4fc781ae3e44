import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from advsep import autodiff as ad
from advsep.autodiff import Tensor


# ---------------------------------------------------------------------------
# independent oracles
# ---------------------------------------------------------------------------


def naive_conv1d(x, w, stride=1, padding=0):
    """Direct triple-loop convolution, the shape/value oracle for conv1d."""
    if isinstance(padding, int):
        padding = (padding, padding)
    if x.ndim == 2:
        x = x[None]
    b, cin, t = x.shape
    cout, cin_w, k = w.shape
    assert cin == cin_w
    xp = np.pad(x, ((0, 0), (0, 0), padding))
    t_out = (xp.shape[-1] - k) // stride + 1
    out = np.zeros((b, cout, t_out))
    for bi in range(b):
        for o in range(cout):
            for ti in range(t_out):
                acc = 0.0
                for i in range(cin):
                    for kk in range(k):
                        acc += xp[bi, i, ti * stride + kk] * w[o, i, kk]
                out[bi, o, ti] = acc
    return out


def naive_conv2d(x, w, stride=(1, 1), padding=((0, 0), (0, 0))):
    if x.ndim == 3:
        x = x[None]
    b, cin, h, wdt = x.shape
    cout, _, kh, kw = w.shape
    ph, pw = padding
    if isinstance(ph, int):
        ph = (ph, ph)
    if isinstance(pw, int):
        pw = (pw, pw)
    xp = np.pad(x, ((0, 0), (0, 0), ph, pw))
    sh, sw = stride
    h_out = (xp.shape[-2] - kh) // sh + 1
    w_out = (xp.shape[-1] - kw) // sw + 1
    out = np.zeros((b, cout, h_out, w_out))
    for bi in range(b):
        for o in range(cout):
            for i in range(cin):
                for hi in range(h_out):
                    for wi in range(w_out):
                        patch = xp[bi, i, hi * sh : hi * sh + kh, wi * sw : wi * sw + kw]
                        out[bi, o, hi, wi] += float((patch * w[o, i]).sum())
    return out


def fd_gradient(f, x, h=1e-6):
    """Central finite differences of a scalar function of a numpy array."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        xp = flat.copy()
        xm = flat.copy()
        xp[i] += h
        xm[i] -= h
        gf[i] = (f(xp.reshape(x.shape)) - f(xm.reshape(x.shape))) / (2 * h)
    return g


# ---------------------------------------------------------------------------
# forward semantics
# ---------------------------------------------------------------------------


def test_add_elementwise():
    out = ad.add(Tensor([1.0, 2.0]), Tensor([3.0, 4.0]))
    np.testing.assert_array_equal(out.data, [4.0, 6.0])


def test_softmax_of_zeros_is_uniform():
    out = ad.softmax(Tensor([0.0, 0.0, 0.0, 0.0]), axis=0)
    np.testing.assert_allclose(out.data, [0.25] * 4, atol=1e-15)


def test_conv1d_output_length_matches_enumeration():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(1, 10))
    w = rng.normal(size=(2, 1, 3))
    out = ad.conv1d(Tensor(x), Tensor(w), stride=2)
    assert out.shape == (2, 4)  # floor((10-3)/2)+1
    np.testing.assert_allclose(out.data, naive_conv1d(x, w, stride=2)[0], atol=1e-12)


@pytest.mark.parametrize("stride,padding", [(1, 0), (2, 0), (3, (1, 2)), (1, 1)])
def test_conv1d_matches_naive(stride, padding):
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2, 3, 17))
    w = rng.normal(size=(4, 3, 4))
    out = ad.conv1d(Tensor(x), Tensor(w), stride=stride, padding=padding)
    np.testing.assert_allclose(out.data, naive_conv1d(x, w, stride, padding), atol=1e-12)


@pytest.mark.parametrize("stride,padding", [((1, 1), ((0, 0), (0, 0))), ((3, 3), ((1, 2), (1, 2)))])
def test_conv2d_matches_naive(stride, padding):
    rng = np.random.default_rng(2)
    x = rng.normal(size=(2, 2, 9, 11))
    w = rng.normal(size=(3, 2, 4, 4))
    out = ad.conv2d(Tensor(x), Tensor(w), stride=stride, padding=padding)
    np.testing.assert_allclose(out.data, naive_conv2d(x, w, stride, padding), atol=1e-12)


def test_shape_mismatch_rejected_with_axis():
    with pytest.raises(ad.ShapeError, match="axis 1"):
        ad.conv1d(Tensor(np.zeros((2, 3, 10))), Tensor(np.zeros((4, 2, 3))))
    with pytest.raises(ad.ShapeError):
        ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))


def test_unknown_primitive_rejected():
    with pytest.raises(KeyError, match="unknown primitive"):
        ad.apply_primitive("gelu", Tensor([1.0]))


def test_apply_primitive_dispatch():
    out = ad.apply_primitive("add", Tensor([1.0, 2.0]), Tensor([3.0, 4.0]))
    np.testing.assert_array_equal(out.data, [4.0, 6.0])


def test_purity_bit_identical():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(3, 5))
    w = rng.normal(size=(2, 3, 3))
    a = ad.conv1d(Tensor(x), Tensor(w), stride=1).data
    b = ad.conv1d(Tensor(x), Tensor(w), stride=1).data
    assert np.array_equal(a, b)
    s1 = ad.softmax(Tensor(x), axis=1).data
    s2 = ad.softmax(Tensor(x), axis=1).data
    assert np.array_equal(s1, s2)


def test_upsample_linear_2x_values():
    x = Tensor([[1.0, 3.0, 5.0]])
    out = ad.upsample_linear_2x(x)
    np.testing.assert_allclose(out.data, [[1.0, 2.0, 3.0, 4.0, 5.0, 5.0]])


def test_invalid_attrs_rejected():
    with pytest.raises(ValueError):
        ad.conv1d(Tensor(np.zeros((1, 8))), Tensor(np.zeros((1, 1, 3))), stride=0)
    with pytest.raises(ValueError):
        ad.leaky_relu(Tensor([1.0]), slope=1.5)


# ---------------------------------------------------------------------------
# backward semantics
# ---------------------------------------------------------------------------


def test_backward_sum_of_squares():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    root = ad.sum_(ad.multiply(x, x))
    ad.backward(root)
    np.testing.assert_allclose(x.grad, [2.0, 4.0, 6.0], atol=1e-15)


def test_backward_fanout_accumulates():
    a = Tensor([1.0, -2.0, 0.5], requires_grad=True)
    root = ad.sum_(ad.add(a, a))
    ad.backward(root)
    np.testing.assert_array_equal(a.grad, [2.0, 2.0, 2.0])


def test_backward_requires_scalar_root():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        ad.backward(ad.multiply(x, x))


def test_independent_leaf_gets_no_gradient():
    x = Tensor([1.0, 2.0], requires_grad=True)
    y = Tensor([3.0, 4.0], requires_grad=True)
    root = ad.sum_(ad.square(x))
    ad.backward(root)
    assert y.grad is None
    np.testing.assert_allclose(x.grad, [2.0, 4.0])


def test_no_grad_suppresses_recording():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with ad.no_grad():
        y = ad.square(x)
    assert y.node is None and not y.requires_grad


def test_requires_grad_false_never_accumulates():
    x = Tensor([1.0, 2.0], requires_grad=False)
    w = Tensor([3.0, 4.0], requires_grad=True)
    root = ad.sum_(ad.multiply(x, w))
    ad.backward(root)
    assert x.grad is None
    np.testing.assert_allclose(w.grad, [1.0, 2.0])


def test_random_composite_matches_finite_differences():
    rng = np.random.default_rng(7)
    x0 = rng.normal(size=(4, 6))
    w0 = rng.normal(size=(6, 3))

    def build(xt):
        h = ad.matmul(xt, Tensor(w0))
        h = ad.leaky_relu(h, slope=0.3)
        h = ad.softmax(h, axis=1)
        h = ad.multiply(h, h)
        return ad.sum_(h)

    xt = Tensor(x0, requires_grad=True)
    root = build(xt)
    ad.backward(root)

    def f(arr):
        with ad.no_grad():
            return build(Tensor(arr)).item()

    g_fd = fd_gradient(f, x0)
    rel = np.abs(xt.grad - g_fd) / np.maximum(1e-3, np.maximum(np.abs(xt.grad), np.abs(g_fd)))
    assert rel.max() < 1e-4


# ---------------------------------------------------------------------------
# grad_check behaviour
# ---------------------------------------------------------------------------


def test_grad_check_sum_of_squares_passes_tight():
    report = ad.grad_check(lambda t: ad.sum_(ad.square(t)), np.array([0.3, -1.2, 4.0]), tol=1e-6)
    assert report.passed and report.checked == 3


def test_grad_check_skips_hinge_kink():
    # min(0, -1 + x) has its kink at x = 1
    f = lambda t: ad.sum_(ad.minimum_zero(ad.add(t, -1.0)))
    report = ad.grad_check(f, np.array([1.0, 0.2, 2.5]))
    assert report.passed
    assert report.skipped_kinks == [0]
    assert report.checked == 2


def test_grad_check_reports_non_finite():
    report = ad.grad_check(lambda t: ad.log(t), np.array([-1.0]))
    assert not report.passed
    assert "non-finite" in report.message


def test_minimum_zero_kink_derivative_is_zero():
    x = Tensor([0.0], requires_grad=True)
    ad.backward(ad.sum_(ad.minimum_zero(x)))
    np.testing.assert_array_equal(x.grad, [0.0])


def test_leaky_relu_kink_uses_slope():
    x = Tensor([0.0], requires_grad=True)
    ad.backward(ad.sum_(ad.leaky_relu(x, slope=0.2)))
    np.testing.assert_allclose(x.grad, [0.2])


# ---------------------------------------------------------------------------
# per-primitive gradient sweep (10 random shapes each)
# ---------------------------------------------------------------------------


def _sweep_cases(rng):
    """(name, builder, input shape) triples; builder maps Tensor -> scalar Tensor."""
    cases = []
    for trial in range(10):
        n = int(rng.integers(2, 7))
        m = int(rng.integers(2, 7))
        other = rng.normal(size=(n, m))
        w1 = rng.normal(size=(3, 2, 3))
        w2 = rng.normal(size=(2, 2, 3, 3))
        wq, wk, wv = (rng.normal(size=(3, 3)) * 0.5 for _ in range(3))
        t_len = int(rng.integers(8, 14))
        cases += [
            ("add", lambda t, o=other: ad.sum_(ad.square(ad.add(t, Tensor(o)))), (n, m)),
            ("subtract", lambda t, o=other: ad.sum_(ad.square(ad.subtract(t, Tensor(o)))), (n, m)),
            ("multiply", lambda t, o=other: ad.sum_(ad.multiply(t, Tensor(o))), (n, m)),
            ("scalar_multiply", lambda t: ad.sum_(ad.scalar_multiply(t, -2.5)), (n, m)),
            ("matmul", lambda t, o=other: ad.sum_(ad.square(ad.matmul(t, Tensor(o.T)))), (n, m)),
            ("conv1d", lambda t, w=w1: ad.sum_(ad.square(ad.conv1d(t, Tensor(w), stride=2, padding=1))), (2, t_len)),
            ("conv2d", lambda t, w=w2: ad.sum_(ad.square(ad.conv2d(t, Tensor(w), stride=(2, 2), padding=(1, 1)))), (2, 8, 9)),
            ("linear", lambda t, o=other: ad.sum_(ad.square(ad.linear(Tensor(o), t))), (4, n)),
            ("leaky_relu", lambda t: ad.sum_(ad.square(ad.leaky_relu(t, slope=0.2))), (n, m)),
            ("softmax", lambda t: ad.sum_(ad.square(ad.softmax(t, axis=1))), (n, m)),
            ("log", lambda t: ad.sum_(ad.log(ad.add(ad.square(t), 0.5))), (n, m)),
            ("log10", lambda t: ad.sum_(ad.log10(ad.add(ad.square(t), 0.5))), (n, m)),
            ("abs", lambda t: ad.sum_(ad.abs_(t)), (n, m)),
            ("square", lambda t: ad.sum_(ad.square(t)), (n, m)),
            ("sum", lambda t: ad.sum_(ad.square(ad.sum_(t, axis=0))), (n, m)),
            ("mean", lambda t: ad.sum_(ad.square(ad.mean_(t, axis=1))), (n, m)),
            ("concat", lambda t, o=other: ad.sum_(ad.square(ad.concat([t, Tensor(o)], axis=0))), (n, m)),
            ("slice", lambda t, nn=n: ad.sum_(ad.square(ad.slice_(t, (slice(0, nn - 1), slice(1, None))))), (n, m)),
            ("reshape", lambda t, nn=n, mm=m: ad.sum_(ad.square(ad.reshape(t, (mm, nn)))), (n, m)),
            ("transpose", lambda t: ad.sum_(ad.square(ad.matmul(ad.transpose(t), t))), (n, m)),
            ("upsample_linear_2x", lambda t: ad.sum_(ad.square(ad.upsample_linear_2x(t))), (2, t_len)),
            ("minimum_zero", lambda t: ad.sum_(ad.minimum_zero(t)), (n, m)),
            (
                "self_attention",
                lambda t, a=wq, b=wk, c=wv: ad.sum_(
                    ad.square(ad.self_attention(t, Tensor(a), Tensor(b), Tensor(c)))
                ),
                (2, 3, 5),
            ),
        ]
    return cases


def test_every_primitive_passes_grad_check():
    rng = np.random.default_rng(11)
    failures = []
    for name, builder, shape in _sweep_cases(rng):
        x = rng.normal(size=shape)
        report = ad.grad_check(builder, x, tol=1e-4)
        if not report.passed:
            failures.append((name, report.max_rel_err, report.message))
    assert not failures, f"grad_check failures: {failures}"


# ---------------------------------------------------------------------------
# invariants and properties
# ---------------------------------------------------------------------------


@settings(max_examples=40, deadline=None)
@given(
    st.lists(st.floats(min_value=-30, max_value=30), min_size=2, max_size=8),
    st.lists(st.floats(min_value=-30, max_value=30), min_size=2, max_size=8),
)
def test_softmax_is_stochastic(row_a, row_b):
    n = min(len(row_a), len(row_b))
    x = Tensor(np.array([row_a[:n], row_b[:n]]))
    s = ad.softmax(x, axis=1).data
    assert (s >= 0).all()
    np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-9)


def test_gradients_accumulate_across_backward_calls():
    x = Tensor([2.0], requires_grad=True)
    ad.backward(ad.sum_(ad.square(x)))
    ad.backward(ad.sum_(ad.square(x)))
    np.testing.assert_allclose(x.grad, [8.0])
    x.zero_grad()
    assert x.grad is None


def test_dtype_switch():
    ad.set_default_dtype(np.float32)
    try:
        t = Tensor([1.0, 2.0])
        assert t.dtype == np.float32
        out = ad.softmax(t, axis=0)
        assert out.dtype == np.float32
    finally:
        ad.set_default_dtype(np.float64)
    assert Tensor([1.0]).dtype == np.float64
