"""Command-line surface: gen, train, eval, separate, check.

Configuration is one JSON document with `data`, `separator`, `train`, and
`eval` sections; any leaf can be overridden on the command line with
repeated `--set section.key=value` flags (values parse as JSON, falling
back to strings). Unknown keys are rejected. Every command embeds its
resolved config in the output directory so runs are reproducible from their
artifacts alone.
"""
from __future__ import annotations

import argparse
import copy
import json
import sys
from pathlib import Path

import numpy as np

from . import checks, data as datamod, dsp, metrics, training
from .data import DatasetError, GenConfig, load_dataset, make_splits, write_dataset
from .dsp import StftConfig
from .models import DiscriminatorSpec, SeparatorConfig
from .training import TrainConfig, evaluate, fit, load_checkpoint, restore_models


DEFAULT_CONFIG = {
    "data": {
        "sample_rate": 8000,
        "duration": 1.0,
        "k_max": 4,
        "k_min": 1,
        "source_weights": [1.0, 1.0, 1.0, 1.0, 1.0],
        "band_preset": "disjoint",
        "reverb_rt60": None,
        "level_db": [-10.0, 0.0],
        "seed": 0,
        "n_train": 2000,
        "n_val": 200,
        "n_test": 200,
    },
    "separator": {
        "k": 4,
        "window_len": 256,
        "hop": 64,
        "fft_len": 256,
        "encoder_channels": [16, 32, 32, 32],
    },
    "train": {
        "discriminators": [],
        "pit_enabled": True,
        "tau": 1e-3,
        "lambda_beta": 0.99,
        "lambda_delta": 1e-8,
        "lr": 1e-4,
        "batch_size": 8,
        "max_steps": 5000,
        "val_every": 500,
        "seed": 0,
        "precision": "float64",
    },
    "eval": {"mixture_consistency": True, "spectrograms": 0},
}


class CliError(Exception):
    pass


def _merge(defaults: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(defaults)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in defaults:
            raise CliError(f"unknown config key: {where}")
        if isinstance(defaults[key], dict) and isinstance(value, dict):
            out[key] = _merge(defaults[key], value, where)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _apply_set(config: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise CliError(f"--set expects key=value, got {assignment!r}")
    dotted, raw = assignment.split("=", 1)
    keys = dotted.split(".")
    node = config
    for key in keys[:-1]:
        if not isinstance(node, dict) or key not in node:
            raise CliError(f"unknown config key: {dotted}")
        node = node[key]
    leaf = keys[-1]
    if not isinstance(node, dict) or leaf not in node:
        raise CliError(f"unknown config key: {dotted}")
    try:
        node[leaf] = json.loads(raw)
    except json.JSONDecodeError:
        node[leaf] = raw


def resolve_config(config_path, sets) -> dict:
    config = copy.deepcopy(DEFAULT_CONFIG)
    if config_path is not None:
        path = Path(config_path)
        if not path.exists():
            raise CliError(f"config file not found: {path}")
        try:
            loaded = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise CliError(f"config file {path} is not valid JSON: {exc}")
        config = _merge(config, loaded)
    for assignment in sets or []:
        _apply_set(config, assignment)
    return config


def _gen_config(section: dict) -> GenConfig:
    return GenConfig(
        sample_rate=section["sample_rate"],
        duration=section["duration"],
        k_max=section["k_max"],
        k_min=section["k_min"],
        source_weights=tuple(section["source_weights"]),
        band_preset=section["band_preset"],
        reverb_rt60=tuple(section["reverb_rt60"]) if section["reverb_rt60"] else None,
        level_db=tuple(section["level_db"]),
        seed=section["seed"],
    )


def _separator_config(config: dict) -> SeparatorConfig:
    section = config["separator"]
    stft = StftConfig(
        sample_rate=config["data"]["sample_rate"],
        window_len=section["window_len"],
        hop=section["hop"],
        fft_len=section["fft_len"],
    )
    return SeparatorConfig(k=section["k"], stft=stft, encoder_channels=tuple(section["encoder_channels"]))


def _train_config(config: dict) -> TrainConfig:
    sep = _separator_config(config)
    specs = []
    for entry in config["train"]["discriminators"]:
        entry = dict(entry)
        entry.setdefault("k", sep.k)
        if entry.get("channels") is not None:
            entry["channels"] = tuple(entry["channels"])
        specs.append(DiscriminatorSpec(**entry))
    section = config["train"]
    return TrainConfig(
        separator=sep,
        discriminators=tuple(specs),
        pit_enabled=section["pit_enabled"],
        tau=section["tau"],
        lambda_beta=section["lambda_beta"],
        lambda_delta=section["lambda_delta"],
        lr=section["lr"],
        batch_size=section["batch_size"],
        max_steps=section["max_steps"],
        val_every=section["val_every"],
        seed=section["seed"],
        precision=section["precision"],
    )


def _write_resolved(config: dict, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(json.dumps(config, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_gen(args) -> int:
    config = resolve_config(args.config, args.set)
    if args.seed is not None:
        config["data"]["seed"] = args.seed
    out_dir = Path(args.out)
    _write_resolved(config, out_dir)
    gen_cfg = _gen_config(config["data"])
    splits = make_splits(gen_cfg, config["data"]["n_train"], config["data"]["n_val"], config["data"]["n_test"])
    for name, examples in splits.items():
        manifest = write_dataset(examples, out_dir / name)
        print(f"wrote {len(examples)} examples to {manifest.parent}")
    return 0


def cmd_train(args) -> int:
    config = resolve_config(args.config, args.set)
    data_dir = Path(args.data)
    out_dir = Path(args.out)
    _write_resolved(config, out_dir)
    k_max = config["data"]["k_max"]
    train_examples = load_dataset(data_dir / "train", k_max=k_max)
    val_examples = load_dataset(data_dir / "val", k_max=k_max)
    cfg = _train_config(config)
    result = fit(cfg, train_examples, val_examples, out_dir=out_dir)
    summary = {
        "best_step": result.best_step,
        "best_si_snr_i": result.best_si_snr_i,
        "best_si_snr_s": result.best_si_snr_s,
        "checkpoint": str(result.checkpoint_path),
    }
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"best step {result.best_step}: SI-SNR_I={result.best_si_snr_i}, SI-SNR_S={result.best_si_snr_s}")
    print(f"checkpoint: {result.checkpoint_path}")
    return 0


class _BypassModel:
    """Debug model whose every output is the input mixture."""

    def __init__(self, k: int):
        self.k = k


def _load_model(checkpoint: str, k_fallback: int):
    if checkpoint == "bypass":
        return _BypassModel(k_fallback)
    header, arrays = load_checkpoint(checkpoint)
    _, separator, _ = restore_models(header, arrays)
    return separator


def _estimate(model, example, mixture_consistent: bool) -> np.ndarray:
    if isinstance(model, _BypassModel):
        return np.stack([example.m.copy() for _ in range(model.k)])
    _, _, waves = model.separate(example.m, mixture_consistent=mixture_consistent)
    return waves


def cmd_eval(args) -> int:
    config = resolve_config(args.config, args.set)
    if args.mixture_consistency is not None:
        config["eval"]["mixture_consistency"] = args.mixture_consistency == "on"
    if args.spectrograms is not None:
        config["eval"]["spectrograms"] = args.spectrograms
    out_dir = Path(args.out)
    _write_resolved(config, out_dir)
    k_max = config["data"]["k_max"]
    split_dir = Path(args.data)
    if (split_dir / "manifest.jsonl").exists():
        examples = load_dataset(split_dir, k_max=k_max)
    else:
        examples = load_dataset(split_dir / "test", k_max=k_max)
    model = _load_model(args.checkpoint, k_fallback=k_max)
    consistent = config["eval"]["mixture_consistency"]
    records = []
    estimates_by_id = {}
    for example in examples:
        est = _estimate(model, example, consistent)
        estimates_by_id[example.id] = est
        records.append(metrics.eval_mixture(list(example.s), list(est), example.m))
    report = metrics.aggregate(records)
    (out_dir / "report.json").write_text(report.to_json(indent=2) + "\n")
    n_png = int(config["eval"]["spectrograms"])
    if n_png > 0:
        stft_cfg = _separator_config(config).stft
        png_dir = out_dir / "spectrograms"
        for example in examples[:n_png]:
            _render_spectrograms(example, estimates_by_id[example.id], stft_cfg, png_dir)
        print(f"wrote {min(n_png, len(examples))} spectrogram grids to {png_dir}")
    print(f"SI-SNR_I = {report.si_snr_i}, SI-SNR_S = {report.si_snr_s} over {report.counts['n_mixtures']} mixtures")
    print(f"report: {out_dir / 'report.json'}")
    return 0


def _render_spectrograms(example, estimates, stft_cfg, png_dir: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    png_dir.mkdir(parents=True, exist_ok=True)
    k = len(estimates)
    rows = [("mix", example.m)]
    rows += [(f"target {j}", example.s[j]) for j in range(k)]
    rows += [(f"estimate {j}", estimates[j]) for j in range(k)]
    fig, axes = plt.subplots(len(rows), 1, figsize=(8, 2 * len(rows)), squeeze=False)
    for ax, (label, wave) in zip(axes[:, 0], rows):
        mag = np.abs(dsp.stft(wave, stft_cfg))
        # log magnitude with a fixed -80 dB floor
        db = np.maximum(20.0 * np.log10(np.maximum(mag, 1e-12)), -80.0)
        ax.imshow(db.T, origin="lower", aspect="auto", cmap="magma", vmin=-80.0, vmax=max(0.0, float(db.max())))
        ax.set_ylabel(label, fontsize=8)
        ax.set_xticks([])
        ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(png_dir / f"{example.id}.png", dpi=100)
    plt.close(fig)


def cmd_separate(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    sr, mix = datamod._read_wav(Path(args.input))
    model = _load_model(args.checkpoint, k_fallback=4)
    if isinstance(model, _BypassModel):
        waves = np.stack([mix for _ in range(model.k)])
    else:
        if model.cfg.stft.sample_rate != sr:
            raise CliError(
                f"checkpoint expects {model.cfg.stft.sample_rate} Hz audio, {args.input} is {sr} Hz"
            )
        _, _, waves = model.separate(mix, mixture_consistent=True)
    for k, wave in enumerate(waves):
        datamod._write_wav(out_dir / f"src_{k}.wav", wave, sr)
    print(f"wrote {len(waves)} estimates to {out_dir}")
    return 0


def cmd_check(args) -> int:
    results = checks.run_suite(args.suite)
    for result in results:
        print(result.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="advsep", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset (train/val/test)")
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--seed", type=int, default=None, help="override data.seed")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config leaf")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a separator")
    p.add_argument("--config", default=None)
    p.add_argument("--data", required=True, help="dataset directory from `advsep gen`")
    p.add_argument("--out", required=True, help="run directory for checkpoints and logs")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    p.add_argument("--checkpoint", required=True, help="checkpoint path, or 'bypass' for the debug model")
    p.add_argument("--data", required=True, help="split directory (or dataset root; uses test/)")
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--mixture-consistency", choices=("on", "off"), default=None)
    p.add_argument("--spectrograms", type=int, default=None, help="write PNG grids for the first N mixtures")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("separate", help="separate one mixture WAV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--in", dest="input", required=True, help="input mixture wav")
    p.add_argument("--out", required=True, help="directory for the K estimate wavs")
    p.set_defaults(func=cmd_separate)

    p = sub.add_parser("check", help="run the oracle self-check suites")
    p.add_argument("--suite", default="all", choices=checks.SUITES + ("all",))
    p.set_defaults(func=cmd_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, DatasetError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
