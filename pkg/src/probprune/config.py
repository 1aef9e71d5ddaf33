"""Experiment configuration: flat `key = value` files with dotted key names.

Lines are `key = value`; blank lines and lines starting with # are ignored.
No nesting, no quoting.  Unknown or duplicate keys are rejected so typos
surface immediately.  See the README for the full key reference.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from .data import Dataset, load_cifar10, synthetic_dataset
from .errors import ConfigError
from .network import ConvNetModel, SgdConfig

PRESETS = {
    # 3 conv + 1 fc; conv1 has 75 weight-matrix columns, conv2/conv3 have 400
    "reference": (
        "conv:out=16,kernel=5,pad=2 relu pool:size=2 "
        "conv:out=16,kernel=5,pad=2 relu pool:size=2 "
        "conv:out=32,kernel=5,pad=2 relu pool:size=2 fc:out={classes}"
    ),
    "tiny": "conv:out=8,kernel=3,pad=1 relu pool:size=2 fc:out={classes}",
}

_CONV_ARGS = {"out", "kernel", "stride", "pad"}


def parse_model_spec(text: str) -> list[tuple[str, dict]]:
    """Parse a layer-list string like "conv:out=32,kernel=5 relu pool:size=2 fc:out=10"."""
    spec: list[tuple[str, dict]] = []
    for stage in text.split():
        kind, _, argtext = stage.partition(":")
        args: dict[str, int] = {}
        if argtext:
            for item in argtext.split(","):
                name, _, raw = item.partition("=")
                if not raw:
                    raise ConfigError(f"malformed layer argument {item!r} in {stage!r}")
                try:
                    args[name] = int(raw)
                except ValueError as exc:
                    raise ConfigError(f"layer argument {item!r} is not an integer") from exc
        if kind == "conv":
            if "out" not in args or not set(args) <= _CONV_ARGS:
                raise ConfigError(f"conv stage needs args out[,kernel,stride,pad]: {stage!r}")
        elif kind == "relu":
            if args:
                raise ConfigError(f"relu takes no arguments: {stage!r}")
        elif kind == "pool":
            if set(args) != {"size"}:
                raise ConfigError(f"pool stage needs exactly size=N: {stage!r}")
        elif kind == "fc":
            if set(args) != {"out"}:
                raise ConfigError(f"fc stage needs exactly out=N: {stage!r}")
        else:
            raise ConfigError(f"unknown layer kind {kind!r}")
        spec.append((kind, args))
    if not spec:
        raise ConfigError("model spec is empty")
    return spec


@dataclass
class PhaseConfig:
    epochs: int = 0
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.0
    batch_size: int = 128
    eval_every: int | None = None

    def sgd(self) -> SgdConfig:
        return SgdConfig(self.learning_rate, self.momentum, self.weight_decay, self.batch_size)


@dataclass
class ExperimentConfig:
    # dataset
    dataset_kind: str = "synthetic"
    dataset_path: str | None = None
    val_size: int = 5000
    n_classes: int = 10
    n_samples: int = 20000
    dims: tuple[int, int, int] = (3, 32, 32)
    margin: float = 0.5
    # model
    model_preset: str | None = "reference"
    model_layers: str | None = None
    precision: str = "float64"
    seed: int = 0
    # schedule
    peak: float = 0.05
    flatness: float = 0.25
    interval: int = 180
    ratio: list[float] | None = None  # one global value or one per conv layer
    proportions: list[float] | None = None
    target_speedup: float | None = None
    unprunable: list[int] = field(default_factory=list)
    # phases
    train: PhaseConfig = field(default_factory=lambda: PhaseConfig(epochs=10))
    prune: PhaseConfig = field(default_factory=PhaseConfig)
    retrain: PhaseConfig = field(default_factory=lambda: PhaseConfig(epochs=5))
    prune_max_iterations: int = 0  # 0 = schedule's default safety budget
    prune_checkpoint_every: int = 0  # iterations between prune_state.ckpt saves, 0 = off
    prune_baseline: str = "baseline.ckpt"
    prune_resume: str = ""
    eval_checkpoint: str = "pruned.ckpt"
    eval_batch: int = 100
    bench_checkpoint: str = "pruned.ckpt"
    bench_batch: int = 32
    bench_warmup: int = 5
    bench_runs: int = 50

    def dtype(self):
        return np.float64 if self.precision == "float64" else np.float32

    def model_spec_text(self) -> str:
        if self.model_layers:
            return self.model_layers
        if self.model_preset not in PRESETS:
            raise ConfigError(
                f"unknown model preset {self.model_preset!r}; "
                f"choose from {sorted(PRESETS)} or set model.layers"
            )
        return PRESETS[self.model_preset].format(classes=self.n_classes)

    def build_model(self, rng: np.random.Generator) -> ConvNetModel:
        spec = parse_model_spec(self.model_spec_text())
        fc_out = [args["out"] for kind, args in spec if kind == "fc"]
        if not fc_out or fc_out[-1] != self.n_classes:
            raise ConfigError(
                f"model's final fc width {fc_out[-1] if fc_out else 'missing'} "
                f"does not match the dataset's {self.n_classes} classes"
            )
        return ConvNetModel.build(spec, self.dims, rng, self.dtype())


def _parse_dims(raw: str) -> tuple[int, int, int]:
    parts = raw.split("x")
    if len(parts) != 3:
        raise ConfigError(f"dims must look like 3x32x32, got {raw!r}")
    return tuple(int(p) for p in parts)  # type: ignore[return-value]


def _parse_floats(raw: str) -> list[float]:
    return [float(p) for p in raw.split(",") if p.strip() != ""]


def _parse_ints(raw: str) -> list[int]:
    return [int(p) for p in raw.split(",") if p.strip() != ""]


def parse_config_text(text: str) -> dict[str, str]:
    pairs: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        key, sep, value = stripped.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = key.strip(), value.strip()
        if key in pairs:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        pairs[key] = value
    return pairs


def config_from_pairs(pairs: dict[str, str]) -> ExperimentConfig:
    cfg = ExperimentConfig()
    phase_fields = {
        "epochs": ("epochs", int),
        "lr": ("learning_rate", float),
        "momentum": ("momentum", float),
        "weight_decay": ("weight_decay", float),
        "batch_size": ("batch_size", int),
        "eval_every": ("eval_every", int),
    }
    simple = {
        "dataset.kind": ("dataset_kind", str),
        "dataset.path": ("dataset_path", str),
        "dataset.val_size": ("val_size", int),
        "dataset.classes": ("n_classes", int),
        "dataset.samples": ("n_samples", int),
        "dataset.dims": ("dims", _parse_dims),
        "dataset.margin": ("margin", float),
        "model.preset": ("model_preset", str),
        "model.layers": ("model_layers", str),
        "model.precision": ("precision", str),
        "seed": ("seed", int),
        "schedule.peak": ("peak", float),
        "schedule.flatness": ("flatness", float),
        "schedule.interval": ("interval", int),
        "schedule.ratio": ("ratio", _parse_floats),
        "ratio.proportions": ("proportions", _parse_floats),
        "ratio.target_speedup": ("target_speedup", float),
        "ratio.unprunable": ("unprunable", _parse_ints),
        "prune.max_iterations": ("prune_max_iterations", int),
        "prune.checkpoint_every": ("prune_checkpoint_every", int),
        "prune.baseline": ("prune_baseline", str),
        "prune.resume": ("prune_resume", str),
        "eval.checkpoint": ("eval_checkpoint", str),
        "eval.batch_size": ("eval_batch", int),
        "bench.checkpoint": ("bench_checkpoint", str),
        "bench.batch_size": ("bench_batch", int),
        "bench.warmup": ("bench_warmup", int),
        "bench.runs": ("bench_runs", int),
    }
    for key, raw in pairs.items():
        if key in simple:
            attr, cast = simple[key]
            try:
                setattr(cfg, attr, cast(raw))
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from exc
            continue
        section, _, tail = key.partition(".")
        if section in ("train", "prune", "retrain") and tail in phase_fields:
            attr, cast = phase_fields[tail]
            try:
                setattr(getattr(cfg, section), attr, cast(raw))
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from exc
            continue
        raise ConfigError(f"unknown config key {key!r}")
    validate_config(cfg)
    return cfg


def validate_config(cfg: ExperimentConfig) -> None:
    if cfg.dataset_kind not in ("synthetic", "cifar10"):
        raise ConfigError(f"dataset.kind must be synthetic or cifar10, got {cfg.dataset_kind!r}")
    if cfg.precision not in ("float64", "float32"):
        raise ConfigError(f"model.precision must be float64 or float32, got {cfg.precision!r}")
    if cfg.model_layers is None and cfg.model_preset is None:
        raise ConfigError("set model.preset or model.layers")
    if cfg.ratio is not None and cfg.proportions is not None:
        raise ConfigError("schedule.ratio and ratio.proportions are mutually exclusive")
    if (cfg.proportions is None) != (cfg.target_speedup is None):
        raise ConfigError("ratio.proportions and ratio.target_speedup go together")
    for name in ("train", "prune", "retrain"):
        phase: PhaseConfig = getattr(cfg, name)
        if phase.eval_every is not None and phase.eval_every < 1:
            raise ConfigError(f"{name}.eval_every must be >= 1")
        phase.sgd()  # range-checks lr/momentum/weight_decay/batch_size
    if cfg.bench_runs < 1 or cfg.bench_warmup < 0 or cfg.bench_batch < 1:
        raise ConfigError("bench.runs must be >= 1, bench.warmup >= 0, bench.batch_size >= 1")


def load_config(path: str | os.PathLike) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    return config_from_pairs(parse_config_text(path.read_text(encoding="utf-8")))


def load_dataset(cfg: ExperimentConfig) -> Dataset:
    if cfg.dataset_kind == "cifar10":
        if not cfg.dataset_path:
            raise ConfigError("dataset.kind = cifar10 needs dataset.path (or --data-dir)")
        return load_cifar10(cfg.dataset_path, cfg.val_size, cfg.dtype())
    return synthetic_dataset(
        seed=cfg.seed,
        n_classes=cfg.n_classes,
        n_samples=cfg.n_samples,
        dims=cfg.dims,
        margin=cfg.margin,
        dtype=cfg.dtype(),
    )


def spawn_rngs(seed: int) -> dict[str, np.random.Generator]:
    """Independent, reproducible streams for each phase of a run."""
    children = np.random.SeedSequence(seed).spawn(4)
    names = ("init", "train", "prune", "retrain")
    return {name: np.random.default_rng(seq) for name, seq in zip(names, children)}


def rebuild_model(arrays: dict[str, np.ndarray], scalars: dict) -> ConvNetModel:
    """Reconstruct a model from checkpoint contents (spec string + arrays)."""
    spec = parse_model_spec(scalars["model_spec"])
    dtype = np.float64 if scalars.get("precision", "float64") == "float64" else np.float32
    model = ConvNetModel.build(
        spec, tuple(scalars["input_shape"]), np.random.default_rng(0), dtype
    )
    ckpt.restore_model_arrays(model, arrays)
    return model
