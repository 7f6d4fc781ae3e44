"""A tour of the reverse-mode autodiff core.

Builds a few computations on Tensors, runs backward passes, and verifies
gradients with the built-in finite-difference checker.
"""
import numpy as np

from advsep import autodiff as ad
from advsep.autodiff import Tensor

print("== elementwise ops and backward ==")
x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
loss = ad.sum_(ad.multiply(x, x))  # sum of squares
ad.backward(loss)
print(f"d(sum x^2)/dx at {x.data} -> {x.grad}  (expected 2x)")

print("\n== fan-out accumulates ==")
a = Tensor([0.5, -1.0], requires_grad=True)
ad.backward(ad.sum_(ad.add(a, a)))
print(f"d(sum(a+a))/da -> {a.grad}  (expected all 2)")

print("\n== softmax is a stochastic map ==")
logits = Tensor(np.random.default_rng(0).normal(size=(2, 5)))
probs = ad.softmax(logits, axis=1)
print(f"row sums: {probs.data.sum(axis=1)}")

print("\n== convolution shape rule ==")
signal = Tensor(np.random.default_rng(1).normal(size=(1, 10)))
kernel = Tensor(np.random.default_rng(2).normal(size=(2, 1, 3)))
out = ad.conv1d(signal, kernel, stride=2)
print(f"conv1d(len 10, kernel 3, stride 2) -> length {out.shape[-1]}  (floor((10-3)/2)+1 = 4)")

print("\n== finite-difference verification ==")
report = ad.grad_check(lambda t: ad.sum_(ad.square(ad.softmax(t, axis=0))), np.random.default_rng(3).normal(size=6))
print(f"softmax grad check: max rel err {report.max_rel_err:.2e}, passed={report.passed}")

print("\n== kinks are detected and skipped ==")
hinge = lambda t: ad.sum_(ad.minimum_zero(ad.add(t, -1.0)))  # kink at x = 1
report = ad.grad_check(hinge, np.array([1.0, 0.0, 2.0]))
print(f"hinge at the kink: skipped coordinates {report.skipped_kinks}, passed={report.passed}")

print("\n== no_grad suppresses recording ==")
with ad.no_grad():
    y = ad.square(x)
print(f"requires_grad under no_grad: {y.requires_grad}")
