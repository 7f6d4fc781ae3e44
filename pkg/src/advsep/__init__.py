"""Adversarial permutation-invariant training for universal sound separation.

A CPU-scale numpy library: reverse-mode autodiff core, STFT masking DSP,
permutation matching with I-replacement, hinge adversarial losses, a U-Net
mask separator with a family of discriminators, SI-SNR evaluation, synthetic
mixture generation, and an alternating adversarial training loop.
"""

from . import autodiff, dsp, matching, losses, models, metrics, data, training

__version__ = "0.1.0"
