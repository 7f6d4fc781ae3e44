"""End-to-end desk-scale training: PIT-only, then an adversarial recipe.

Runs a deliberately small configuration (0.25 s clips, narrow channels)
so the whole script finishes in about a minute on a laptop CPU. For real
desk-scale runs use the CLI (see README).
"""
import numpy as np

from advsep.data import GenConfig, make_splits
from advsep.dsp import StftConfig
from advsep.models import DiscriminatorSpec, SeparatorConfig
from advsep.training import TrainConfig, evaluate, fit, load_checkpoint, restore_models

gen = GenConfig(sample_rate=8000, duration=0.25, k_max=2, k_min=1, band_preset="disjoint", seed=11)
splits = make_splits(gen, 64, 16, 16)
print(f"dataset: {len(splits['train'])} train / {len(splits['val'])} val / {len(splits['test'])} test")

sep_cfg = SeparatorConfig(k=2, stft=StftConfig(8000, 128, 32, 128), encoder_channels=(8, 12, 12, 12))

print("\n== PIT-only ==")
cfg = TrainConfig(separator=sep_cfg, pit_enabled=True, lr=1e-3, batch_size=8,
                  max_steps=300, val_every=100, seed=0)
result = fit(cfg, splits["train"], splits["val"], out_dir="/tmp/advsep_demo_pit")
print(f"best validation SI-SNR_I: {result.best_si_snr_i:.2f} dB at step {result.best_step}")

header, arrays = load_checkpoint(result.checkpoint_path)
_, separator, _ = restore_models(header, arrays)
report = evaluate(separator, splits["test"])
print(f"test SI-SNR_I: {report.si_snr_i:.2f} dB, SI-SNR_S: {report.si_snr_s:.2f} dB")

print("\n== adding wave-domain discriminators (context with I-replacement + instance) ==")
specs = (
    DiscriminatorSpec("wave", "context", m_conditioned=True, i_replace=1, k=2),
    DiscriminatorSpec("wave", "instance", k=2),
)
cfg_adv = TrainConfig(separator=sep_cfg, discriminators=specs, pit_enabled=True,
                      lr=1e-3, batch_size=8, max_steps=150, val_every=75, seed=0)
result_adv = fit(cfg_adv, splits["train"], splits["val"], out_dir="/tmp/advsep_demo_adv")
print(f"best validation SI-SNR_I: {result_adv.best_si_snr_i:.2f} dB at step {result_adv.best_step}")
print("(training logs with per-step loss components are in /tmp/advsep_demo_*/train_log.jsonl)")
