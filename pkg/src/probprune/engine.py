"""The pruning engine: probability updates, Monte Carlo masks, and run loops.

The pruning loop follows a fixed per-iteration order: every `update_every`
iterations the layers are re-ranked by L1 norm and every group's pruning
probability moves by delta(rank) (clamped to [0,1], p == 1 is absorbing and
marks the group permanently pruned); then masks are sampled (P(mask=0) = p),
applied to the model, and one SGD step runs.  The loop halts when every
scheduled layer holds exactly its target count of permanently pruned groups;
per-update absorption is capped at that target so the count cannot jump past
it when several groups cross p == 1 together.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .criteria import group_l1_norms, rank_ascending
from .errors import ConfigError, PruneTimeoutError
from .metrics import MetricRow, RunMetrics
from .network import ConvNetModel, MomentumSgd, SgdConfig
from .schedule import PruningSchedule


@dataclass
class GroupStates:
    """Vectorized pruning state for one layer's weight groups."""

    layer_id: int
    p: np.ndarray  # pruning probability per group
    mask: np.ndarray  # current sampled mask (1 keep, 0 masked)
    permanent: np.ndarray  # permanently pruned flags
    last_rank: np.ndarray  # most recent rank per group, -1 before the first update

    @classmethod
    def fresh(cls, layer_id: int, n_groups: int) -> "GroupStates":
        return cls(
            layer_id=layer_id,
            p=np.zeros(n_groups),
            mask=np.ones(n_groups),
            permanent=np.zeros(n_groups, dtype=bool),
            last_rank=np.full(n_groups, -1, dtype=np.int64),
        )

    @property
    def n_groups(self) -> int:
        return len(self.p)

    def pruned_count(self) -> int:
        return int(self.permanent.sum())

    def pruned_fraction(self) -> float:
        return self.pruned_count() / self.n_groups

    def mean_p(self) -> float:
        return float(self.p.mean())


def sample_masks(states: list[GroupStates], rng: np.random.Generator) -> list[np.ndarray]:
    """Sample per-group masks with P(mask=0) = p, in fixed state order.

    One uniform draw is consumed per non-permanent group, in ascending
    group-index order within each GroupStates; permanently pruned groups get
    mask 0 without consuming randomness.  Masks are stored on the states and
    returned.
    """
    out = []
    for st in states:
        active = ~st.permanent
        draws = rng.random(int(active.sum()))
        mask = np.zeros(st.n_groups)
        mask[active] = (draws >= st.p[active]).astype(np.float64)
        st.mask = mask
        out.append(mask)
    return out


def update_probabilities(
    states: dict[int, GroupStates],
    ranks: dict[int, np.ndarray],
    schedule: PruningSchedule,
) -> None:
    """Apply one clamped probability update to every scheduled layer.

    p <- clip(p + delta(rank), 0, 1); groups reaching p == 1 are marked
    permanently pruned (absorbing).  Absorption is capped at the layer
    target: when more groups cross 1 in one update than slots remain, the
    lowest-ranked fill the slots and the rest are held just below 1, so the
    permanent count lands exactly on round(R*Nc) and the stop condition can
    fire.  Advances schedule.k once.
    """
    for lid in sorted(states):
        st = states[lid]
        layer_ranks = np.asarray(ranks[lid])
        if not np.array_equal(np.sort(layer_ranks), np.arange(st.n_groups)):
            raise ConfigError(f"layer {lid}: ranks are not a permutation of 0..Nc-1")
        step = schedule.delta(layer_ranks, lid)
        p = np.clip(st.p + step, 0.0, 1.0)
        p[st.permanent] = 1.0
        crossing = np.flatnonzero((p >= 1.0) & ~st.permanent)
        room = max(schedule.layers[lid].target - st.pruned_count(), 0)
        if len(crossing) > room:
            order = np.argsort(layer_ranks[crossing])
            p[crossing[order[room:]]] = np.nextafter(1.0, 0.0)
            crossing = crossing[order[:room]]
        st.permanent[crossing] = True
        st.p = p
        st.last_rank = layer_ranks.astype(np.int64)
    schedule.k += 1


def stop_condition(states: dict[int, GroupStates], schedule: PruningSchedule) -> bool:
    """True iff every scheduled layer has exactly its target pruned count."""
    return all(
        states[lid].pruned_count() == lay.target for lid, lay in schedule.layers.items()
    )


def recovery_ratio(
    initial_ranks: np.ndarray, final_ranks: np.ndarray, ratio: float, n_columns: int
) -> float:
    """Fraction of the pruning target that started below R*Nc but ended at or above it."""
    initial_ranks = np.asarray(initial_ranks)
    final_ranks = np.asarray(final_ranks)
    expect = np.arange(n_columns)
    if not np.array_equal(np.sort(initial_ranks), expect) or not np.array_equal(
        np.sort(final_ranks), expect
    ):
        raise ConfigError("rank vectors must be permutations of 0..Nc-1")
    target = int(round(ratio * n_columns))
    if target == 0:
        raise ConfigError(f"ratio {ratio} targets zero of {n_columns} groups")
    threshold = ratio * n_columns
    moved = np.count_nonzero((initial_ranks < threshold) & (final_ranks >= threshold))
    return moved / target


@dataclass
class RecoveryRecord:
    layer_id: int
    initial_below: np.ndarray
    final_above: np.ndarray
    recovery_ratio: float


def states_from_pruned_sets(
    model: ConvNetModel, pruned: dict[int, np.ndarray]
) -> dict[int, GroupStates]:
    """Build GroupStates for a one-shot pruning outcome (p=1 on pruned groups)."""
    states = {}
    for lid, layer in model.conv_layers():
        if lid not in pruned:
            continue
        st = GroupStates.fresh(lid, layer.n_columns)
        idx = np.asarray(pruned[lid], dtype=np.int64)
        st.p[idx] = 1.0
        st.permanent[idx] = True
        st.mask = (~st.permanent).astype(np.float64)
        states[lid] = st
    return states


class PruningRun:
    """A resumable pruning loop over a pre-trained model.

    All randomness (mask sampling and batch selection) is drawn from the one
    generator `rng`, in a fixed per-iteration order, so (initial model, rng
    state) fully determines the run and a checkpointed rng state resumes it
    exactly.

    Metric rows (with a validation pass each) are recorded after every
    `record_every`-th probability update and once at the end; 1 records at
    every update.
    """

    PHASE = "prune"

    def __init__(
        self,
        model: ConvNetModel,
        dataset,
        schedule: PruningSchedule,
        sgd_cfg: SgdConfig,
        rng: np.random.Generator,
        metrics: RunMetrics | None = None,
        eval_batch: int = 100,
        record_every: int = 1,
    ):
        conv_ids = {lid: layer for lid, layer in model.conv_layers()}
        for lid, lay in schedule.layers.items():
            if lid not in conv_ids:
                raise ConfigError(f"schedule covers layer {lid}, which is not a conv layer")
            if conv_ids[lid].n_columns != lay.n_columns:
                raise ConfigError(
                    f"layer {lid}: schedule built for {lay.n_columns} columns, "
                    f"model has {conv_ids[lid].n_columns}"
                )
        if record_every < 1:
            raise ConfigError(f"record_every must be >= 1, got {record_every}")
        self.model = model
        self.dataset = dataset
        self.schedule = schedule
        self.cfg = sgd_cfg
        self.rng = rng
        self.metrics = RunMetrics() if metrics is None else metrics
        self.eval_batch = eval_batch
        self.record_every = record_every
        self.optimizer = MomentumSgd(sgd_cfg)
        self.states: dict[int, GroupStates] = {
            lid: GroupStates.fresh(lid, conv_ids[lid].n_columns) for lid in schedule.layers
        }
        self.iteration = 0
        self.initial_ranks: dict[int, np.ndarray] | None = None
        self.final_ranks: dict[int, np.ndarray] | None = None
        self.recovery: list[RecoveryRecord] = []
        self.finished = False
        self._loss_sum = 0.0
        self._loss_count = 0

    def _current_ranks(self) -> dict[int, np.ndarray]:
        return {
            lid: rank_ascending(group_l1_norms(layer))
            for lid, layer in self.model.conv_layers()
            if lid in self.states
        }

    def _probe_loss(self) -> float:
        x = self.dataset.x_train[: self.cfg.batch_size]
        y = self.dataset.y_train[: self.cfg.batch_size]
        return self.model.loss(x, y)

    def _record(self) -> None:
        if self._loss_count:
            loss = self._loss_sum / self._loss_count
        else:
            loss = self._probe_loss()
        val_acc = self.model.accuracy(self.dataset.x_val, self.dataset.y_val, self.eval_batch)
        for lid, _ in self.model.conv_layers():
            st = self.states.get(lid)
            self.metrics.add(
                MetricRow(
                    iteration=self.iteration,
                    phase=self.PHASE,
                    loss=loss,
                    val_acc=val_acc,
                    layer_id=lid,
                    pruned_fraction=st.pruned_fraction() if st else 0.0,
                    mean_p=st.mean_p() if st else 0.0,
                )
            )
        self._loss_sum = 0.0
        self._loss_count = 0

    def step(self) -> bool:
        """Run one pruning iteration; returns True once the run has finished."""
        if self.finished:
            raise RuntimeError("pruning run already finished")
        if self.iteration % self.schedule.update_every == 0:
            ranks = self._current_ranks()
            if self.initial_ranks is None:
                self.initial_ranks = {lid: r.copy() for lid, r in ranks.items()}
            update_probabilities(self.states, ranks, self.schedule)
            if (self.schedule.k - 1) % self.record_every == 0:
                self._record()
        ordered = [self.states[lid] for lid in sorted(self.states)]
        sample_masks(ordered, self.rng)
        for lid in sorted(self.states):
            self.model.layers[lid].set_mask(self.states[lid].mask)
        n = len(self.dataset.x_train)
        idx = self.rng.integers(0, n, size=self.cfg.batch_size)
        loss = self.model.loss_and_grads(self.dataset.x_train[idx], self.dataset.y_train[idx])
        self.optimizer.step(self.model)
        self._loss_sum += loss
        self._loss_count += 1
        self.iteration += 1
        if stop_condition(self.states, self.schedule):
            self._finalize()
        return self.finished

    def _finalize(self) -> None:
        self.final_ranks = self._current_ranks()
        for lid in sorted(self.states):
            lay = self.schedule.layers[lid]
            initial = self.initial_ranks[lid]
            final = self.final_ranks[lid]
            threshold = lay.ratio * lay.n_columns
            below = np.flatnonzero(initial < threshold)
            above = below[final[below] >= threshold]
            self.recovery.append(
                RecoveryRecord(
                    layer_id=lid,
                    initial_below=below,
                    final_above=above,
                    recovery_ratio=len(above) / lay.target,
                )
            )
        # freeze the final masks: only permanently pruned columns stay masked,
        # and surviving groups stop being pruning candidates
        for lid in sorted(self.states):
            st = self.states[lid]
            st.mask = (~st.permanent).astype(np.float64)
            st.p = np.where(st.permanent, 1.0, 0.0)
            self.model.layers[lid].set_mask(st.mask)
        self.finished = True
        self._record()

    def run(self, max_iterations: int | None = None, on_iteration=None) -> "PruningRun":
        budget = self.schedule.max_iteration_budget() if max_iterations is None else max_iterations
        while not self.finished:
            if self.iteration >= budget:
                fractions = {
                    lid: f"{st.pruned_count()}/{self.schedule.layers[lid].target}"
                    for lid, st in sorted(self.states.items())
                }
                raise PruneTimeoutError(
                    f"no convergence within {budget} iterations; pruned per layer: {fractions}"
                )
            self.step()
            if on_iteration is not None:
                on_iteration(self)
        return self

    # ---- persistence -----------------------------------------------------

    def export_state(self) -> tuple[dict[str, np.ndarray], dict]:
        """Engine-side checkpoint payload (model arrays are the caller's job)."""
        arrays: dict[str, np.ndarray] = {}
        for lid, st in sorted(self.states.items()):
            arrays[f"spp.layer{lid}.p"] = st.p
            arrays[f"spp.layer{lid}.permanent"] = st.permanent
            arrays[f"spp.layer{lid}.last_rank"] = st.last_rank
            if self.initial_ranks is not None:
                arrays[f"spp.layer{lid}.initial_ranks"] = self.initial_ranks[lid]
        for path, vel in self.optimizer.velocities.items():
            arrays[f"opt.{path}"] = vel
        scalars = {
            "iteration": self.iteration,
            "schedule_k": self.schedule.k,
            "loss_sum": self._loss_sum,
            "loss_count": self._loss_count,
            "finished": self.finished,
            "rng_state": self.rng.bit_generator.state,
            "metrics_rows": self.metrics.rows_written,
        }
        return arrays, scalars

    def load_state(self, arrays: dict[str, np.ndarray], scalars: dict) -> None:
        """Restore engine state exported by `export_state`.

        The model's own arrays (weights, biases, masks) must already be
        restored; group masks are re-adopted from the model's conv layers.
        """
        for lid, st in self.states.items():
            st.p = arrays[f"spp.layer{lid}.p"].copy()
            st.permanent = arrays[f"spp.layer{lid}.permanent"].copy()
            st.last_rank = arrays[f"spp.layer{lid}.last_rank"].copy()
            st.mask = np.asarray(self.model.layers[lid].mask, dtype=np.float64).copy()
            key = f"spp.layer{lid}.initial_ranks"
            if key in arrays:
                if self.initial_ranks is None:
                    self.initial_ranks = {}
                self.initial_ranks[lid] = arrays[key].copy()
        for path, value, _, _ in self.model.param_items():
            key = f"opt.{path}"
            if key in arrays:
                self.optimizer.velocities[path] = arrays[key].astype(value.dtype).copy()
        self.iteration = int(scalars["iteration"])
        self.schedule.k = int(scalars["schedule_k"])
        self._loss_sum = float(scalars["loss_sum"])
        self._loss_count = int(scalars["loss_count"])
        self.finished = bool(scalars["finished"])
        self.rng.bit_generator.state = scalars["rng_state"]


def spp_run(
    model: ConvNetModel,
    dataset,
    schedule: PruningSchedule,
    sgd_cfg: SgdConfig,
    rng: np.random.Generator,
    metrics: RunMetrics | None = None,
    max_iterations: int | None = None,
) -> PruningRun:
    """Run the pruning loop to completion and return the finished run."""
    return PruningRun(model, dataset, schedule, sgd_cfg, rng, metrics).run(max_iterations)


def run_training(
    model: ConvNetModel,
    dataset,
    cfg: SgdConfig,
    epochs: int,
    rng: np.random.Generator,
    metrics: RunMetrics | None = None,
    phase: str = "train",
    eval_every: int | None = None,
    optimizer: MomentumSgd | None = None,
    states: dict[int, GroupStates] | None = None,
    eval_batch: int = 100,
) -> MomentumSgd:
    """Plain minibatch training (no probability updates; masks stay as they are).

    Batches are sampled with replacement from the generator; an epoch is
    ceil(n_train / batch_size) iterations.  Metric rows are recorded at
    iteration 0, every `eval_every` iterations (default: once per epoch), and
    at the end.
    """
    if epochs < 0:
        raise ConfigError(f"epochs must be >= 0, got {epochs}")
    n = len(dataset.x_train)
    if n == 0:
        raise ConfigError("cannot train on an empty dataset")
    metrics = RunMetrics() if metrics is None else metrics
    iters_per_epoch = max(1, math.ceil(n / cfg.batch_size))
    total = epochs * iters_per_epoch
    eval_every = iters_per_epoch if eval_every is None else eval_every
    opt = MomentumSgd(cfg) if optimizer is None else optimizer
    loss_sum, loss_count = 0.0, 0
    last_recorded = -1

    def record(iteration: int) -> None:
        nonlocal loss_sum, loss_count, last_recorded
        if iteration == last_recorded:
            return
        if loss_count:
            loss = loss_sum / loss_count
        else:
            loss = model.loss(dataset.x_train[: cfg.batch_size], dataset.y_train[: cfg.batch_size])
        val_acc = model.accuracy(dataset.x_val, dataset.y_val, eval_batch)
        for lid, layer in model.conv_layers():
            st = states.get(lid) if states else None
            masked = float(np.mean(np.asarray(layer.mask) == 0))
            metrics.add(
                MetricRow(
                    iteration=iteration,
                    phase=phase,
                    loss=loss,
                    val_acc=val_acc,
                    layer_id=lid,
                    pruned_fraction=st.pruned_fraction() if st else masked,
                    mean_p=st.mean_p() if st else masked,
                )
            )
        loss_sum, loss_count = 0.0, 0
        last_recorded = iteration

    record(0)
    for i in range(total):
        idx = rng.integers(0, n, size=cfg.batch_size)
        loss_sum += model.loss_and_grads(dataset.x_train[idx], dataset.y_train[idx])
        loss_count += 1
        opt.step(model)
        if (i + 1) % eval_every == 0 or i + 1 == total:
            record(i + 1)
    return opt


def retrain(
    model: ConvNetModel,
    dataset,
    cfg: SgdConfig,
    epochs: int,
    rng: np.random.Generator,
    metrics: RunMetrics | None = None,
    states: dict[int, GroupStates] | None = None,
    eval_every: int | None = None,
    eval_batch: int = 100,
) -> MomentumSgd:
    """Retrain a pruned model with its masks frozen (no probability updates)."""
    return run_training(
        model,
        dataset,
        cfg,
        epochs,
        rng,
        metrics=metrics,
        phase="retrain",
        eval_every=eval_every,
        states=states,
        eval_batch=eval_batch,
    )
