"""Command-line front end: train, prune, eval, bench.

Every command takes a flat key-value config file (all keys optional) and a
few overriding flags, and writes its artifacts into --out:

    train   baseline.ckpt, train_metrics.csv
    prune   pruned.ckpt, prune_metrics.csv, sensitivity.csv, recovery.csv
            (probabilistic method only), ratio_plan.csv (when ratios come
            from proportions + a speedup target), prune_state.ckpt
            (when prune.checkpoint_every is set)
    eval    prints val/test accuracy of a checkpointed model
    bench   bench.csv, dense vs compacted inference timing

Relative checkpoint names in the config resolve against --out.  Output is
`key=value` lines so scripts can grep results.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from .bench import run_benchmark, write_bench_csv
from .config import (
    ExperimentConfig,
    load_config,
    load_dataset,
    rebuild_model,
    spawn_rngs,
)
from .criteria import (
    allocate_ratios,
    fp_oneshot_prune,
    pca_sensitivity,
    round_half_even,
)
from .engine import PruningRun, retrain, run_training, states_from_pruned_sets
from .errors import ConfigError, ProbpruneError
from .metrics import (
    RunMetrics,
    write_ratio_plan_csv,
    write_recovery_csv,
    write_sensitivity_csv,
)
from .schedule import PruningSchedule


def _load_cfg(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.data_dir is not None:
        cfg.dataset_kind = "cifar10"
        cfg.dataset_path = args.data_dir
    return cfg


def _resolve(out: Path, name: str) -> Path:
    p = Path(name)
    return p if p.is_absolute() else out / p


def _model_scalars(cfg: ExperimentConfig) -> dict:
    return {
        "model_spec": cfg.model_spec_text(),
        "input_shape": list(cfg.dims),
        "precision": cfg.precision,
        "seed": cfg.seed,
        "n_classes": cfg.n_classes,
    }


def _load_model(path: Path):
    arrays, scalars = ckpt.load_checkpoint(path)
    return rebuild_model(arrays, scalars), scalars


def _final_accuracies(model, dataset, eval_batch: int) -> tuple[float, float]:
    val = model.accuracy(dataset.x_val, dataset.y_val, eval_batch)
    test = model.accuracy(dataset.x_test, dataset.y_test, eval_batch)
    return val, test


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rngs = spawn_rngs(cfg.seed)
    dataset = load_dataset(cfg)
    model = cfg.build_model(rngs["init"])
    metrics = RunMetrics()
    metrics.attach(out / "train_metrics.csv")
    try:
        run_training(
            model,
            dataset,
            cfg.train.sgd(),
            cfg.train.epochs,
            rngs["train"],
            metrics,
            eval_every=cfg.train.eval_every,
            eval_batch=cfg.eval_batch,
        )
    finally:
        metrics.close()
    val, test = _final_accuracies(model, dataset, cfg.eval_batch)
    scalars = _model_scalars(cfg)
    scalars.update({"phase": "train", "val_acc": val, "test_acc": test})
    ckpt.save_checkpoint(out / "baseline.ckpt", ckpt.model_arrays(model), scalars)
    print(f"val_acc={val!r}")
    print(f"test_acc={test!r}")
    print(f"saved={out / 'baseline.ckpt'}")
    return 0


def _resolve_ratios(cfg: ExperimentConfig, model, out: Path) -> dict[int, float]:
    """Per-layer pruning ratios from the config (direct or via a FLOP target)."""
    convs = model.conv_layers()
    if cfg.proportions is not None:
        plan = allocate_ratios(cfg.proportions, model, cfg.target_speedup, cfg.unprunable)
        write_ratio_plan_csv(plan, out / "ratio_plan.csv")
        print(f"achieved_speedup={plan.achieved_speedup!r}")
        ratios = plan.pruning_ratios
    elif cfg.ratio is not None:
        if len(cfg.ratio) == 1:
            ratios = {lid: cfg.ratio[0] for lid, _ in convs}
        elif len(cfg.ratio) == len(convs):
            ratios = {lid: r for (lid, _), r in zip(convs, cfg.ratio)}
        else:
            raise ConfigError(
                f"schedule.ratio lists {len(cfg.ratio)} values for {len(convs)} conv layers"
            )
    else:
        raise ConfigError("set schedule.ratio or ratio.proportions + ratio.target_speedup")
    # drop layers whose target rounds to zero groups; they cannot be pruned
    columns = {lid: layer.n_columns for lid, layer in convs}
    return {
        lid: r for lid, r in ratios.items() if r > 0 and round_half_even(r * columns[lid]) >= 1
    }


def _save_prune_state(run: PruningRun, cfg: ExperimentConfig, path: Path) -> None:
    arrays = dict(ckpt.model_arrays(run.model))
    state_arrays, state_scalars = run.export_state()
    arrays.update(state_arrays)
    scalars = _model_scalars(cfg)
    scalars["phase"] = "prune"
    scalars.update(state_scalars)
    ckpt.save_checkpoint(path, arrays, scalars)


def cmd_prune(args) -> int:
    cfg = _load_cfg(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rngs = spawn_rngs(cfg.seed)
    dataset = load_dataset(cfg)
    model, _ = _load_model(_resolve(out, cfg.prune_baseline))

    curves = [
        pca_sensitivity(layer.weight_matrix, layer_id=lid) for lid, layer in model.conv_layers()
    ]
    write_sensitivity_csv(curves, out / "sensitivity.csv")

    ratios = _resolve_ratios(cfg, model, out)
    if not ratios:
        raise ConfigError("no layer has a pruning target of at least one group")
    metrics = RunMetrics()
    budget = cfg.prune_max_iterations if cfg.prune_max_iterations > 0 else None

    try:
        if args.method == "spp":
            schedule = PruningSchedule.for_model(
                model, ratios, cfg.peak, cfg.flatness, cfg.interval
            )
            run = PruningRun(
                model,
                dataset,
                schedule,
                cfg.prune.sgd(),
                rngs["prune"],
                metrics,
                cfg.eval_batch,
                record_every=cfg.prune.eval_every or 1,
            )
            if cfg.prune_resume:
                arrays, scalars = ckpt.load_checkpoint(_resolve(out, cfg.prune_resume))
                ckpt.restore_model_arrays(model, arrays)
                run.load_state(arrays, scalars)
                metrics.attach(out / "prune_metrics.csv", existing_rows=int(scalars["metrics_rows"]))
            else:
                metrics.attach(out / "prune_metrics.csv")
            every = cfg.prune_checkpoint_every
            save_state = None
            if every > 0:
                state_path = out / "prune_state.ckpt"

                def save_state(r: PruningRun) -> None:
                    if not r.finished and r.iteration % every == 0:
                        _save_prune_state(r, cfg, state_path)

            run.run(budget, on_iteration=save_state)
            write_recovery_csv(run.recovery, out / "recovery.csv")
            states = run.states
            print(f"iterations={run.iteration}")
            for rec in run.recovery:
                print(f"layer{rec.layer_id}.recovery_ratio={rec.recovery_ratio!r}")
        else:
            pruned = fp_oneshot_prune(model, ratios)
            states = states_from_pruned_sets(model, pruned)
            metrics.attach(out / "prune_metrics.csv")
        for lid in sorted(states):
            print(f"layer{lid}.pruned={states[lid].pruned_count()}/{states[lid].n_groups}")
        retrain(
            model,
            dataset,
            cfg.retrain.sgd(),
            cfg.retrain.epochs,
            rngs["retrain"],
            metrics,
            states=states,
            eval_every=cfg.retrain.eval_every,
            eval_batch=cfg.eval_batch,
        )
    finally:
        metrics.close()

    val, test = _final_accuracies(model, dataset, cfg.eval_batch)
    scalars = _model_scalars(cfg)
    scalars.update(
        {
            "phase": "prune",
            "method": args.method,
            "ratios": {str(k): v for k, v in sorted(ratios.items())},
            "val_acc": val,
            "test_acc": test,
        }
    )
    ckpt.save_checkpoint(out / "pruned.ckpt", ckpt.model_arrays(model), scalars)
    print(f"val_acc={val!r}")
    print(f"test_acc={test!r}")
    print(f"saved={out / 'pruned.ckpt'}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_cfg(args)
    out = Path(args.out)
    path = _resolve(out, args.checkpoint or cfg.eval_checkpoint)
    model, scalars = _load_model(path)
    dataset = load_dataset(cfg)
    val, test = _final_accuracies(model, dataset, cfg.eval_batch)
    print(f"val_acc={val!r}")
    print(f"test_acc={test!r}")
    if "val_acc" in scalars:
        print(f"checkpoint.val_acc={scalars['val_acc']!r}")
    if "test_acc" in scalars:
        print(f"checkpoint.test_acc={scalars['test_acc']!r}")
    return 0


def cmd_bench(args) -> int:
    cfg = _load_cfg(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = _resolve(out, args.checkpoint or cfg.bench_checkpoint)
    arrays, scalars = ckpt.load_checkpoint(path)
    if args.precision:
        scalars = dict(scalars, precision=args.precision)
    model = rebuild_model(arrays, scalars)
    rng = np.random.default_rng(cfg.seed)
    shape = (cfg.bench_batch, *scalars["input_shape"])
    x = rng.standard_normal(shape).astype(model.dtype)
    result = run_benchmark(model, x, cfg.bench_warmup, cfg.bench_runs)
    write_bench_csv(out / "bench.csv", result)
    print(f"dense_ms={result.dense_ms!r}")
    print(f"compact_ms={result.compact_ms!r}")
    print(f"speedup={result.speedup!r}")
    print(f"max_abs_diff={result.max_abs_diff!r}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key-value config file")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument(
        "--data-dir",
        help="directory of binary image batches (implies dataset.kind = cifar10)",
    )
    common.add_argument("--out", default=".", help="output directory (default: .)")

    parser = argparse.ArgumentParser(
        prog="probprune",
        description="Train, probabilistically prune, evaluate, and benchmark small CNNs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="train a dense baseline")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("prune", parents=[common], help="prune a trained baseline, then retrain")
    p.add_argument(
        "--method",
        choices=("spp", "fp"),
        default="spp",
        help="spp: iterative probabilistic pruning; fp: one-shot smallest-column pruning",
    )
    p.set_defaults(fn=cmd_prune)

    p = sub.add_parser("eval", parents=[common], help="report a checkpoint's accuracy")
    p.add_argument("--checkpoint", help="checkpoint path (default: eval.checkpoint)")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("bench", parents=[common], help="time dense vs compacted inference")
    p.add_argument("--checkpoint", help="checkpoint path (default: bench.checkpoint)")
    p.add_argument("--precision", choices=("float32", "float64"), help="cast the model first")
    p.set_defaults(fn=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ProbpruneError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
