"""Alternating adversarial training: discriminators first, then the separator.

Each step runs two phases. Phase 1 computes separations without recording
gradients, builds real and I-replaced fake inputs per discriminator spec,
and takes one Adam step per discriminator on its negated hinge loss.
Phase 2 freezes the discriminators, recomputes the separation with
gradients, and takes one Adam step on the separator loss (adversarial
scores plus the lambda-balanced PIT term when enabled).

Checkpoints serialize every named parameter array (separator, each
discriminator, optimizer moments) in declaration order behind a JSON header
with a content checksum.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from . import dsp, matching, metrics
from .autodiff import Tensor
from .data import SeparationExample
from .dsp import StftConfig
from .losses import (
    AdvLossReport,
    LambdaState,
    combine_with_pit,
    d_loss_context,
    d_loss_instance,
    g_adversarial_loss,
)
from .models import Discriminator, DiscriminatorSpec, Separator, SeparatorConfig, assemble_d_input

CHECKPOINT_FORMAT = "advsep-checkpoint"
CHECKPOINT_VERSION = 1


class NonFiniteLossError(RuntimeError):
    def __init__(self, term: str, value: float, step: Optional[int] = None):
        at = f" at step {step}" if step is not None else ""
        super().__init__(f"non-finite loss term {term!r} ({value}){at}; step aborted")
        self.term = term


@dataclass(frozen=True)
class TrainConfig:
    separator: SeparatorConfig = field(default_factory=SeparatorConfig.desk)
    discriminators: tuple = ()
    pit_enabled: bool = True
    tau: float = 1e-3
    lambda_beta: float = 0.99
    lambda_delta: float = 1e-8
    lr: float = 1e-4
    batch_size: int = 8
    max_steps: int = 5000
    val_every: int = 500
    seed: int = 0
    precision: str = "float64"

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("learning rate must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch size must be at least 1")
        if not self.pit_enabled and not self.discriminators:
            raise ValueError("need at least one loss term: enable PIT or add a discriminator")
        if self.precision not in ("float32", "float64"):
            raise ValueError(f"precision must be float32 or float64, got {self.precision!r}")
        for spec in self.discriminators:
            if spec.k != self.separator.k:
                raise ValueError(f"{spec.name} has K={spec.k} but the separator outputs K={self.separator.k}")


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


def adam_update(params, grads, m, v, lr, beta1=0.9, beta2=0.999, eps=1e-8, t=1):
    """One bias-corrected Adam update; returns (params, m, v) as new arrays."""
    if t < 1:
        raise ValueError("step count t starts at 1")
    m = beta1 * m + (1.0 - beta1) * grads
    v = beta2 * v + (1.0 - beta2) * grads * grads
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    return params - lr * m_hat / (np.sqrt(v_hat) + eps), m, v


class Adam:
    """Adam over a module's named parameters, with per-parameter moments."""

    def __init__(self, named_params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.named_params = list(named_params)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.named_params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.named_params}

    def zero_grad(self):
        for _, p in self.named_params:
            p.zero_grad()

    def step(self):
        self.t += 1
        for name, p in self.named_params:
            grad = p.grad if p.grad is not None else np.zeros_like(p.data)
            p.data, self.m[name], self.v[name] = adam_update(
                p.data, grad.astype(p.data.dtype, copy=False), self.m[name], self.v[name],
                self.lr, self.beta1, self.beta2, self.eps, self.t,
            )

    def state_arrays(self, prefix: str):
        out = [(f"{prefix}.t", np.array([float(self.t)]))]
        for name, _ in self.named_params:
            out.append((f"{prefix}.m.{name}", self.m[name]))
            out.append((f"{prefix}.v.{name}", self.v[name]))
        return out

    def load_state(self, prefix: str, arrays: dict):
        self.t = int(arrays[f"{prefix}.t"][0])
        for name, _ in self.named_params:
            self.m[name] = arrays[f"{prefix}.m.{name}"].copy()
            self.v[name] = arrays[f"{prefix}.v.{name}"].copy()


# ---------------------------------------------------------------------------
# batch assembly per discriminator domain
# ---------------------------------------------------------------------------


def _check_finite(name: str, value: float, step: Optional[int] = None) -> float:
    if not np.isfinite(value):
        raise NonFiniteLossError(name, value, step)
    return float(value)


def _stack_examples(pieces) -> Tensor:
    rows = [ad.reshape(p, (1,) + p.shape) for p in pieces]
    return ad.concat(rows, axis=0)


class _BatchContext:
    """Per-batch tensors and numpy views used to assemble discriminator inputs."""

    def __init__(self, batch: Sequence[SeparationExample], out, stft_cfg: StftConfig):
        self.batch = batch
        self.out = out
        self.mixes = out.mix  # (B, L)
        self.targets = np.stack([ex.s for ex in batch])  # (B, K, L)
        self.stft_cfg = stft_cfg
        self._target_mags = None
        self._real_masks = None

    @property
    def target_mags(self):
        if self._target_mags is None:
            self._target_mags = np.abs(dsp.stft(self.targets, self.stft_cfg))
        return self._target_mags

    @property
    def real_masks(self):
        if self._real_masks is None:
            self._real_masks = np.stack([dsp.ratio_masks(m) for m in self.target_mags])
        return self._real_masks

    def real_items(self, domain: str, b: int):
        if domain == "wave":
            return list(self.targets[b])
        if domain == "stft":
            return list(self.target_mags[b])
        return list(self.real_masks[b])

    def fake_items(self, domain: str, b: int, tracked: bool):
        """Estimate items of one example; Tensor slices when tracked, numpy otherwise."""
        k = self.targets.shape[1]
        if domain == "wave":
            source = self.out.est_waves
        elif domain == "stft":
            source = self.out.est_mags
        else:
            source = self.out.masks
        if tracked:
            return [ad.slice_(source, (b, j)) for j in range(k)]
        return [source.data[b, j] for j in range(k)]

    def mix_item(self, domain: str, b: int):
        if domain == "wave":
            return self.mixes[b]
        return self.out.mix_mag[b]

    def real_batch(self, spec: DiscriminatorSpec) -> Tensor:
        b = len(self.batch)
        if spec.kind == "instance":
            items = self.targets if spec.domain == "wave" else (
                self.target_mags if spec.domain == "stft" else self.real_masks
            )
            flat = items.reshape((-1, 1) + items.shape[2:])
            return Tensor(np.ascontiguousarray(flat, dtype=ad.get_default_dtype()))
        rows = []
        for i in range(b):
            mix = self.mix_item(spec.domain, i) if spec.m_conditioned else None
            rows.append(assemble_d_input(spec, self.real_items(spec.domain, i), mix=mix))
        return _stack_examples(rows)

    def fake_batch(self, spec: DiscriminatorSpec, rng, tau: float, tracked: bool) -> Tensor:
        b = len(self.batch)
        if spec.kind == "instance":
            if tracked:
                src = {"wave": self.out.est_waves, "stft": self.out.est_mags, "mask": self.out.masks}[spec.domain]
                return ad.reshape(src, (src.shape[0] * src.shape[1], 1) + src.shape[2:])
            src = {"wave": self.out.est_waves, "stft": self.out.est_mags, "mask": self.out.masks}[spec.domain]
            flat = src.data.reshape((-1, 1) + src.data.shape[2:])
            return Tensor(np.ascontiguousarray(flat))
        rows = []
        for i in range(b):
            fakes, _, _ = matching.i_replacement(
                self.real_items(spec.domain, i),
                self.fake_items(spec.domain, i, tracked),
                spec.i_replace,
                spec.matching_kind,
                rng,
                mix=self.mixes[i] if spec.domain == "wave" else None,
                tau=tau,
            )
            mix = self.mix_item(spec.domain, i) if spec.m_conditioned else None
            rows.append(assemble_d_input(spec, fakes, mix=mix))
        return _stack_examples(rows)


def _batch_pit(ctx: _BatchContext, tau: float):
    """Mean PIT loss over the batch, differentiable through the estimates."""
    b, k, _ = ctx.targets.shape
    total = None
    for i in range(b):
        est = [ad.slice_(ctx.out.est_waves, (i, j)) for j in range(k)]
        loss, _ = matching.pit_loss(list(ctx.targets[i]), est, ctx.mixes[i], tau=tau)
        total = loss if total is None else ad.add(total, loss)
    return ad.scalar_multiply(total, 1.0 / b)


# ---------------------------------------------------------------------------
# one training step
# ---------------------------------------------------------------------------


def train_step(
    batch: Sequence[SeparationExample],
    separator: Separator,
    discriminators: dict,
    opt_sep: Adam,
    opt_ds: dict,
    cfg: TrainConfig,
    lam_state: LambdaState,
    rng: np.random.Generator,
    step: Optional[int] = None,
) -> AdvLossReport:
    report = AdvLossReport()
    mixes = np.stack([ex.m for ex in batch])

    # phase 1: update each discriminator on frozen separations
    if discriminators:
        with ad.no_grad():
            out = separator.forward(mixes)
        ctx = _BatchContext(batch, out, cfg.separator.stft)
        for name, disc in discriminators.items():
            spec = disc.spec
            opt_ds[name].zero_grad()
            real_scores = disc.forward(ctx.real_batch(spec))
            fake_scores = disc.forward(ctx.fake_batch(spec, rng, cfg.tau, tracked=False))
            if spec.kind == "instance":
                d_loss = d_loss_instance(real_scores, fake_scores)
            else:
                d_loss = d_loss_context(real_scores, fake_scores)
            real_term = float(np.mean(np.minimum(0.0, -1.0 + real_scores.data)))
            fake_term = float(np.mean(np.minimum(0.0, -1.0 - fake_scores.data)))
            _check_finite(f"d_loss[{name}]", d_loss.item(), step)
            ad.backward(ad.scalar_multiply(d_loss, -1.0))  # maximize the hinge objective
            opt_ds[name].step()
            report.d_loss_total[name] = d_loss.item()
            report.d_loss_real[name] = real_term
            report.d_loss_fake[name] = fake_term

    # phase 2: update the separator against the just-updated, now-frozen discriminators
    for disc in discriminators.values():
        disc.set_requires_grad(False)
    try:
        out = separator.forward(mixes)
        ctx = _BatchContext(batch, out, cfg.separator.stft)
        contributions = []
        for name, disc in discriminators.items():
            scores = disc.forward(ctx.fake_batch(disc.spec, rng, cfg.tau, tracked=True))
            tag = "instance" if disc.spec.kind == "instance" else "context"
            contributions.append((tag, scores))
        g_loss = g_adversarial_loss(contributions) if contributions else None
        pit_t = _batch_pit(ctx, cfg.tau) if cfg.pit_enabled else None
        if g_loss is not None:
            report.g_loss = _check_finite("g_loss", g_loss.item(), step)
        if pit_t is not None:
            report.pit = _check_finite("pit_loss", pit_t.item(), step)
        if g_loss is not None and pit_t is not None:
            total, lam = combine_with_pit(g_loss, pit_t, lam_state)
            report.lam = lam
        elif g_loss is not None:
            total = g_loss
        else:
            total = pit_t
        report.total_sep_loss = _check_finite("total_sep_loss", total.item(), step)
        opt_sep.zero_grad()
        ad.backward(total)
        opt_sep.step()
    finally:
        for disc in discriminators.values():
            disc.set_requires_grad(True)
    return report


# ---------------------------------------------------------------------------
# evaluation helper
# ---------------------------------------------------------------------------


def evaluate(
    separator: Separator,
    examples: Sequence[SeparationExample],
    mixture_consistent: bool = True,
    chunk: int = 16,
) -> metrics.EvalReport:
    """Separate every example and aggregate SI-SNR statistics."""
    records = []
    for start in range(0, len(examples), chunk):
        part = examples[start : start + chunk]
        mixes = np.stack([ex.m for ex in part])
        with ad.no_grad():
            out = separator.forward(mixes)
        waves = out.est_waves.data.astype(np.float64)
        if mixture_consistent:
            k = waves.shape[1]
            residual = mixes - waves.sum(axis=1)
            waves = waves + residual[:, None, :] / k
        for i, ex in enumerate(part):
            records.append(metrics.eval_mixture(list(ex.s), list(waves[i]), ex.m))
    return metrics.aggregate(records)


# ---------------------------------------------------------------------------
# checkpoint format
# ---------------------------------------------------------------------------


def save_checkpoint(path: os.PathLike, step: int, config: dict, arrays, extra: Optional[dict] = None) -> None:
    """JSON header line + concatenated little-endian raw arrays + sha256."""
    entries = []
    payload = bytearray()
    for name, arr in arrays:
        arr = np.ascontiguousarray(arr)
        code = "<f4" if arr.dtype == np.float32 else "<f8"
        payload.extend(arr.astype(code, copy=False).tobytes())
        entries.append({"name": name, "shape": list(arr.shape), "dtype": code})
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "step": step,
        "config": config,
        "arrays": entries,
        "payload_sha256": hashlib.sha256(bytes(payload)).hexdigest(),
    }
    if extra:
        header.update(extra)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        fh.write(bytes(payload))


def load_checkpoint(path: os.PathLike) -> tuple:
    """Returns (header dict, {name: array}); verifies the content checksum."""
    with open(Path(path), "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        payload = fh.read()
    if header.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not an advsep checkpoint")
    digest = hashlib.sha256(payload).hexdigest()
    if digest != header["payload_sha256"]:
        raise ValueError(f"checkpoint {path} failed its checksum")
    arrays = {}
    offset = 0
    for entry in header["arrays"]:
        dtype = np.dtype(entry["dtype"])
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        nbytes = count * dtype.itemsize
        arr = np.frombuffer(payload[offset : offset + nbytes], dtype=dtype).reshape(entry["shape"])
        arrays[entry["name"]] = arr.copy()
        offset += nbytes
    if offset != len(payload):
        raise ValueError(f"checkpoint {path} has {len(payload) - offset} trailing bytes")
    return header, arrays


def config_to_dict(cfg: TrainConfig) -> dict:
    d = asdict(cfg)
    d["separator"]["stft"] = asdict(cfg.separator.stft)
    d["discriminators"] = [asdict(s) for s in cfg.discriminators]
    return d


def config_from_dict(d: dict) -> TrainConfig:
    sep = dict(d["separator"])
    sep["stft"] = StftConfig(**sep["stft"])
    sep["encoder_channels"] = tuple(sep["encoder_channels"])
    specs = []
    for s in d["discriminators"]:
        s = dict(s)
        if s.get("channels") is not None:
            s["channels"] = tuple(s["channels"])
        specs.append(DiscriminatorSpec(**s))
    args = {k: v for k, v in d.items() if k not in ("separator", "discriminators")}
    return TrainConfig(separator=SeparatorConfig(**sep), discriminators=tuple(specs), **args)


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------


@dataclass
class FitResult:
    best_step: int
    best_si_snr_i: Optional[float]
    best_si_snr_s: Optional[float]
    checkpoint_path: Optional[Path]
    log_lines: list
    steps_run: int


def build_models(cfg: TrainConfig, n_samples: int) -> tuple:
    """Seeded separator plus one discriminator per spec, sized for n_samples."""
    separator = Separator(cfg.separator, seed=cfg.seed)
    stft_cfg = cfg.separator.stft
    extent_2d = (stft_cfg.n_frames(n_samples), stft_cfg.bins)
    discs = {}
    for i, spec in enumerate(cfg.discriminators):
        extent = n_samples if spec.domain == "wave" else extent_2d
        name = spec.name
        if name in discs:
            raise ValueError(f"duplicate discriminator spec {name}")
        discs[name] = Discriminator(spec, extent, seed=cfg.seed + 101 + i)
    return separator, discs


def _model_arrays(separator, discs, opt_sep, opt_ds):
    arrays = [(f"separator.{n}", p.data) for n, p in separator.parameters()]
    for name, disc in discs.items():
        arrays += [(f"{name}.{n}", p.data) for n, p in disc.parameters()]
    arrays += opt_sep.state_arrays("opt.separator")
    for name, opt in opt_ds.items():
        arrays += opt.state_arrays(f"opt.{name}")
    return arrays


def restore_models(header: dict, arrays: dict) -> tuple:
    """Rebuild (cfg, separator, discriminators) from a loaded checkpoint."""
    cfg = config_from_dict(header["config"])
    n_samples = int(header["n_samples"])
    separator, discs = build_models(cfg, n_samples)
    for n, p in separator.parameters():
        p.data = arrays[f"separator.{n}"].astype(p.data.dtype, copy=True)
    for name, disc in discs.items():
        for n, p in disc.parameters():
            p.data = arrays[f"{name}.{n}"].astype(p.data.dtype, copy=True)
    return cfg, separator, discs


def fit(
    cfg: TrainConfig,
    train_examples: Sequence[SeparationExample],
    val_examples: Sequence[SeparationExample],
    out_dir: Optional[os.PathLike] = None,
) -> FitResult:
    """Train, validating every val_every steps and keeping the best checkpoint.

    Validation applies the mixture-consistency projection (it is inference)
    and selects on SI-SNR_I of the multi-source validation mixes.
    """
    if not train_examples or not val_examples:
        raise ValueError("fit needs non-empty train and validation splits")
    lengths = {len(ex.m) for ex in list(train_examples) + list(val_examples)}
    if len(lengths) != 1:
        raise ValueError(f"examples must share one length, got {sorted(lengths)}")
    n_samples = lengths.pop()

    prev_dtype = ad.get_default_dtype()
    ad.set_default_dtype(np.float32 if cfg.precision == "float32" else np.float64)
    try:
        return _fit_inner(cfg, train_examples, val_examples, out_dir, n_samples)
    finally:
        ad.set_default_dtype(prev_dtype)


def _fit_inner(cfg, train_examples, val_examples, out_dir, n_samples):
    separator, discs = build_models(cfg, n_samples)
    opt_sep = Adam(separator.parameters(), lr=cfg.lr)
    opt_ds = {name: Adam(d.parameters(), lr=cfg.lr) for name, d in discs.items()}
    lam_state = LambdaState(beta=cfg.lambda_beta, delta=cfg.lambda_delta)
    rng = np.random.default_rng(cfg.seed)

    out_path = Path(out_dir) if out_dir is not None else None
    log_fh = None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
        log_fh = open(out_path / "train_log.jsonl", "w", encoding="utf-8")
    log_lines: list = []

    def emit(record: dict):
        line = json.dumps(record, sort_keys=True)
        log_lines.append(line)
        if log_fh is not None:
            log_fh.write(line + "\n")
            log_fh.flush()

    ckpt_path = out_path / "checkpoint_best.ckpt" if out_path is not None else None
    best = {"step": 0, "si_snr_i": None, "si_snr_s": None, "score": None}

    def validate(step: int) -> None:
        report = evaluate(separator, val_examples, mixture_consistent=True)
        emit({"type": "val", "step": step, "si_snr_i": report.si_snr_i, "si_snr_s": report.si_snr_s})
        score = report.si_snr_i if report.si_snr_i is not None else report.si_snr_s
        if best["score"] is None or (score is not None and score > best["score"]):
            best.update(step=step, si_snr_i=report.si_snr_i, si_snr_s=report.si_snr_s, score=score)
            if ckpt_path is not None:
                save_checkpoint(
                    ckpt_path, step, config_to_dict(cfg),
                    _model_arrays(separator, discs, opt_sep, opt_ds),
                    extra={"n_samples": int(n_samples)},
                )

    try:
        validate(0)
        order = []
        for step in range(1, cfg.max_steps + 1):
            if len(order) < cfg.batch_size:
                order = list(rng.permutation(len(train_examples)))
            take = [order.pop() for _ in range(min(cfg.batch_size, len(train_examples)))]
            batch = [train_examples[i] for i in take]
            report = train_step(batch, separator, discs, opt_sep, opt_ds, cfg, lam_state, rng, step)
            record = {"type": "step", "step": step, "total_sep_loss": report.total_sep_loss}
            if report.pit is not None:
                record["pit"] = report.pit
            if report.lam is not None:
                record["lambda"] = report.lam
            if discs:
                record["g_loss"] = report.g_loss
                record["d_loss"] = report.d_loss_total
            emit(record)
            if cfg.val_every > 0 and step % cfg.val_every == 0:
                validate(step)
        if cfg.max_steps >= 1 and (cfg.val_every <= 0 or cfg.max_steps % cfg.val_every != 0):
            validate(cfg.max_steps)
    finally:
        if log_fh is not None:
            log_fh.close()

    return FitResult(
        best_step=best["step"],
        best_si_snr_i=best["si_snr_i"],
        best_si_snr_s=best["si_snr_s"],
        checkpoint_path=ckpt_path,
        log_lines=log_lines,
        steps_run=cfg.max_steps,
    )
