import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from conftest import tiny_conv_net
from probprune.checkpoint import model_arrays, restore_model_arrays
from probprune.criteria import group_l1_norms, rank_ascending
from probprune.data import synthetic_dataset
from probprune.engine import (
    GroupStates,
    PruningRun,
    recovery_ratio,
    retrain,
    run_training,
    sample_masks,
    states_from_pruned_sets,
    stop_condition,
    update_probabilities,
)
from probprune.errors import ConfigError, PruneTimeoutError
from probprune.metrics import RunMetrics
from probprune.network import SgdConfig
from probprune.schedule import PruningSchedule


def small_dataset(seed=5):
    return synthetic_dataset(seed=seed, n_classes=3, n_samples=60, dims=(3, 8, 8), margin=0.7)


def updates_until_pruned(step: float, limit: int = 10_000_000):
    """Closed-form per-group simulation of the clamped probability recursion."""
    if step <= 0:
        return None
    p, k = 0.0, 0
    while k < limit:
        k += 1
        p = min(max(p + step, 0.0), 1.0)
        if p >= 1.0:
            return k
    raise AssertionError("simulation did not converge")


class TestSampleMasks:
    def test_p_zero_keeps_everything(self, rng):
        st = GroupStates.fresh(0, 50)
        sample_masks([st], rng)
        assert_array_equal(st.mask, np.ones(50))

    def test_p_one_masks_everything(self, rng):
        st = GroupStates.fresh(0, 50)
        st.p[:] = 1.0
        sample_masks([st], rng)
        assert_array_equal(st.mask, np.zeros(50))

    def test_binomial_frequency(self):
        st = GroupStates.fresh(0, 10_000)
        st.p[:] = 0.7
        rng = np.random.default_rng(2024)
        sample_masks([st], rng)
        masked = float(np.mean(st.mask == 0))
        assert abs(masked - 0.7) < 0.02

    def test_permanent_groups_consume_no_randomness(self):
        with_perm = GroupStates.fresh(0, 6)
        with_perm.permanent[np.array([1, 4])] = True
        with_perm.p[:] = 0.5
        only_active = GroupStates.fresh(0, 4)
        only_active.p[:] = 0.5
        sample_masks([with_perm], np.random.default_rng(9))
        sample_masks([only_active], np.random.default_rng(9))
        active_idx = np.flatnonzero(~with_perm.permanent)
        assert_array_equal(with_perm.mask[active_idx], only_active.mask)
        assert_array_equal(with_perm.mask[[1, 4]], [0.0, 0.0])


class TestUpdateProbabilities:
    def make(self, nc=100):
        sched = PruningSchedule({0: 0.5}, {0: nc}, 0.05, 0.25, update_every=1)
        st = GroupStates.fresh(0, nc)
        return sched, {0: st}

    def test_clamping_and_absorption(self):
        sched, states = self.make()
        st = states[0]
        ranks = np.arange(100)
        st.p[0] = 0.98  # rank 0 gets delta 0.05 -> clamps to 1
        st.p[99] = 0.01  # rank 99 gets a large negative delta -> clamps to 0
        st.p[50] = 0.5
        st.p[60] = 0.5
        update_probabilities(states, {0: ranks}, sched)
        assert st.p[0] == 1.0 and st.permanent[0]
        assert st.p[99] == 0.0
        # rank 50 is the exact zero crossing at this flatness; 60 is past it
        assert st.p[50] == 0.5
        assert st.p[60] < 0.5
        assert sched.k == 1

    def test_direct_addition_example(self):
        sched, states = self.make()
        st = states[0]
        st.p[:] = 0.5
        ranks = np.arange(100)
        update_probabilities(states, {0: ranks}, sched)
        center = sched.layers[0].center
        # the group at integer rank nearest the curve center moved by ~uA
        r = int(round(center))
        assert_allclose(st.p[r], 0.5 + sched.delta(r, 0), rtol=1e-12)
        assert_allclose(sched.delta(center, 0), 0.0125, rtol=1e-12)

    def test_permanent_stays_pruned(self):
        sched, states = self.make()
        st = states[0]
        st.permanent[3] = True
        st.p[3] = 1.0
        ranks = np.arange(100)
        ranks[3], ranks[99] = 99, 3  # even ranked worst (most negative delta)
        update_probabilities(states, {0: ranks}, sched)
        assert st.p[3] == 1.0 and st.permanent[3]

    def test_rejects_non_permutation(self):
        sched, states = self.make(nc=10)
        with pytest.raises(ConfigError):
            update_probabilities(states, {0: np.zeros(10, dtype=int)}, sched)

    def test_absorption_capped_at_target(self):
        # target is round(0.5 * 8) = 4 with two slots already taken; three
        # groups cross 1 together, so the two worst-ranked fill the remaining
        # slots and the third is held just below 1
        sched = PruningSchedule({0: 0.5}, {0: 8}, 0.05, 0.25, update_every=1)
        st = GroupStates.fresh(0, 8)
        st.permanent[6:] = True
        st.p[6:] = 1.0
        st.p[:3] = 0.99
        update_probabilities({0: st}, {0: np.arange(8)}, sched)
        assert st.pruned_count() == 4
        assert st.permanent[0] and st.permanent[1]
        assert not st.permanent[2]
        assert 0.99 < st.p[2] < 1.0

    def test_full_layer_stays_at_target(self):
        # both filled slots taken; the remaining groups sit at the bottom
        # ranks and would cross, but no room is left
        sched = PruningSchedule({0: 0.5}, {0: 4}, 0.05, 0.25, update_every=1)
        st = GroupStates.fresh(0, 4)
        st.permanent[:2] = True
        st.p[:] = [1.0, 1.0, 0.999, 0.999]
        update_probabilities({0: st}, {0: np.array([2, 3, 0, 1])}, sched)
        assert st.pruned_count() == 2
        assert np.all(st.p[2:] < 1.0)


class TestStopCondition:
    def test_exact_count_required(self):
        sched = PruningSchedule({0: 0.5}, {0: 100}, update_every=1)
        st = GroupStates.fresh(0, 100)
        st.permanent[:49] = True
        assert not stop_condition({0: st}, sched)
        st.permanent[49] = True
        assert stop_condition({0: st}, sched)
        st.permanent[50] = True
        assert not stop_condition({0: st}, sched)  # overshoot is not "equal"

    def test_ties_to_even_target(self):
        sched = PruningSchedule({0: 0.5}, {0: 75}, update_every=1)
        assert sched.layers[0].target == 38


class TestRecoveryRatio:
    def test_half_recovered_example(self):
        initial = np.arange(8)
        final = np.array([0, 1, 6, 7, 2, 3, 4, 5])
        # groups 2 and 3 started below threshold 4 and ended above it
        assert recovery_ratio(initial, final, 0.5, 8) == 0.5

    def test_identical_ranks_recover_nothing(self):
        r = np.random.default_rng(3).permutation(20)
        assert recovery_ratio(r, r, 0.4, 20) == 0.0

    def test_rejects_non_permutations(self):
        with pytest.raises(ConfigError):
            recovery_ratio(np.zeros(5, dtype=int), np.arange(5), 0.5, 5)

    def test_rejects_zero_target(self):
        with pytest.raises(ConfigError):
            recovery_ratio(np.arange(100), np.arange(100), 0.001, 100)


class StaticRankSetup:
    """Shared fixture logic: lr=0 pruning run whose ranks can never move."""

    def build(self, seed=11, update_every=1, record_every=1):
        rng = np.random.default_rng(seed)
        model = tiny_conv_net(rng)
        dataset = small_dataset()
        schedule = PruningSchedule.for_model(model, 0.5, update_every=update_every)
        cfg = SgdConfig(learning_rate=0.0, momentum=0.0, weight_decay=0.0, batch_size=4)
        run = PruningRun(
            model,
            dataset,
            schedule,
            cfg,
            np.random.default_rng(seed + 1),
            record_every=record_every,
        )
        return model, schedule, run


class TestStaticRankOracle(StaticRankSetup):
    def test_engine_matches_closed_form_simulation(self):
        model, schedule, run = self.build()
        initial = {
            lid: rank_ascending(group_l1_norms(layer)) for lid, layer in model.conv_layers()
        }
        run.run()
        worst_updates = 0
        for lid, layer in model.conv_layers():
            lay = schedule.layers[lid]
            ranks = initial[lid]
            expected_pruned = np.flatnonzero(ranks < lay.target)
            st = run.states[lid]
            assert st.pruned_count() == lay.target
            assert_array_equal(np.flatnonzero(st.permanent), expected_pruned)
            # permanently pruned columns are exactly the masked ones
            assert_array_equal(np.flatnonzero(model.layers[lid].mask == 0), expected_pruned)
            for g in expected_pruned:
                k = updates_until_pruned(schedule.delta(int(ranks[g]), lid))
                worst_updates = max(worst_updates, k)
        # with t=1, iterations == updates; the run stops with the slowest group
        assert run.iteration == worst_updates
        assert schedule.k == worst_updates

    def test_rank_zero_group_prunes_at_update_twenty(self):
        model, schedule, run = self.build()
        lid, layer = model.conv_layers()[0]
        ranks = rank_ascending(group_l1_norms(layer))
        g0 = int(np.flatnonzero(ranks == 0)[0])
        while not run.states[lid].permanent[g0]:
            run.step()
        assert schedule.k == 20
        assert updates_until_pruned(0.05) == 20

    def test_same_seed_identical_runs(self):
        outcomes = []
        for _ in range(2):
            _, _, run = self.build(seed=21)
            run.run()
            masks = {lid: st.permanent.copy() for lid, st in run.states.items()}
            rows = [tuple(vars(r).values()) for r in run.metrics.rows]
            outcomes.append((masks, run.iteration, rows))
        a, b = outcomes
        assert a[1] == b[1] and a[2] == b[2]
        for lid in a[0]:
            assert_array_equal(a[0][lid], b[0][lid])

    def test_timeout_reports_progress(self):
        _, _, run = self.build()
        with pytest.raises(PruneTimeoutError) as err:
            run.run(max_iterations=3)
        assert "3 iterations" in str(err.value)
        assert "/" in str(err.value)

    def test_record_every_thins_metric_rows(self):
        _, _, dense = self.build(seed=31)
        dense.run()
        _, _, sparse = self.build(seed=31, record_every=5)
        sparse.run()
        assert sparse.iteration == dense.iteration
        dense_iters = {r.iteration for r in dense.metrics.rows}
        sparse_iters = sorted({r.iteration for r in sparse.metrics.rows})
        assert set(sparse_iters) < dense_iters
        # the finish row is always recorded
        assert sparse_iters[-1] == sparse.iteration

    def test_record_every_must_be_positive(self):
        with pytest.raises(ConfigError):
            self.build(record_every=0)


class TestResumeEquivalence(StaticRankSetup):
    def test_split_run_equals_uninterrupted(self):
        # uninterrupted reference
        model_a, _, run_a = self.build(seed=31, update_every=2)
        run_a.run()

        # same construction, stopped after 75 iterations and persisted
        model_b, _, run_b = self.build(seed=31, update_every=2)
        for _ in range(75):
            run_b.step()
        saved_model = {k: v.copy() for k, v in model_arrays(model_b).items()}
        state_arrays, state_scalars = run_b.export_state()
        rows_before = len(run_b.metrics.rows)

        # a fresh process: rebuild everything, load, continue
        model_c, _, run_c = self.build(seed=31, update_every=2)
        restore_model_arrays(model_c, saved_model)
        run_c.load_state(state_arrays, state_scalars)
        run_c.run()

        assert run_c.iteration == run_a.iteration
        for lid, st in run_a.states.items():
            assert_array_equal(st.permanent, run_c.states[lid].permanent)
            assert_array_equal(model_a.layers[lid].mask, model_c.layers[lid].mask)
        tail_a = [tuple(vars(r).values()) for r in run_a.metrics.rows[rows_before:]]
        tail_c = [tuple(vars(r).values()) for r in run_c.metrics.rows]
        assert tail_a == tail_c
        for (pa, va, _, _), (pc, vc, _, _) in zip(model_a.param_items(), model_c.param_items()):
            assert pa == pc
            assert va.tobytes() == vc.tobytes()


class TestRunTrainingAndRetrain:
    def test_zero_epochs_leave_model_untouched(self, rng):
        model = tiny_conv_net(rng)
        before = {p: v.copy() for p, v, _, _ in model.param_items()}
        metrics = RunMetrics()
        retrain(model, small_dataset(), SgdConfig(batch_size=8), 0, rng, metrics)
        for p, v, _, _ in model.param_items():
            assert v.tobytes() == before[p].tobytes()
        # one evaluation point, one row per conv layer
        assert len(metrics.rows) == len(model.conv_layers())

    def test_masked_columns_stay_zero_through_retrain(self, rng):
        model = tiny_conv_net(rng)
        lid, conv = model.conv_layers()[0]
        pruned = np.array([0, 5, 9])
        mask = np.ones(conv.n_columns)
        mask[pruned] = 0
        conv.set_mask(mask)
        states = states_from_pruned_sets(model, {lid: pruned})
        stored = conv.weight_matrix[:, pruned].copy()
        retrain(model, small_dataset(), SgdConfig(batch_size=8), 2, rng, states=states)
        assert_array_equal(conv.masked_matrix()[:, pruned], 0.0)
        assert conv.weight_matrix[:, pruned].tobytes() == stored.tobytes()

    def test_metric_rows_report_pruned_fraction(self, rng):
        model = tiny_conv_net(rng)
        lid, conv = model.conv_layers()[1]
        pruned = np.arange(conv.n_columns // 2)
        mask = np.ones(conv.n_columns)
        mask[pruned] = 0
        conv.set_mask(mask)
        states = states_from_pruned_sets(model, {lid: pruned})
        metrics = RunMetrics()
        retrain(model, small_dataset(), SgdConfig(batch_size=8), 1, rng, metrics, states=states)
        rows = [r for r in metrics.rows if r.layer_id == lid]
        assert all(r.phase == "retrain" for r in rows)
        assert all(r.pruned_fraction == 0.5 for r in rows)

    def test_iterations_increase_within_phase(self, rng):
        model = tiny_conv_net(rng)
        metrics = RunMetrics()
        run_training(model, small_dataset(), SgdConfig(batch_size=8), 3, rng, metrics)
        per_layer = {}
        for r in metrics.rows:
            per_layer.setdefault(r.layer_id, []).append(r.iteration)
        for iters in per_layer.values():
            assert all(b > a for a, b in zip(iters, iters[1:]))

    def test_negative_epochs_rejected(self, rng):
        with pytest.raises(ConfigError):
            run_training(tiny_conv_net(rng), small_dataset(), SgdConfig(), -1, rng)


class TestStatesFromPrunedSets:
    def test_flags_and_masks(self, rng):
        model = tiny_conv_net(rng)
        lid, conv = model.conv_layers()[0]
        states = states_from_pruned_sets(model, {lid: np.array([2, 4])})
        st = states[lid]
        assert st.pruned_count() == 2
        assert st.p[2] == 1.0 and st.p[4] == 1.0
        assert st.mask[2] == 0.0 and st.mask[4] == 0.0
        assert st.mask.sum() == conv.n_columns - 2


class TestPruningRunValidation:
    def test_schedule_layer_must_be_conv(self, rng):
        model = tiny_conv_net(rng)
        sched = PruningSchedule({1: 0.5}, {1: 27}, update_every=1)
        with pytest.raises(ConfigError):
            PruningRun(model, small_dataset(), sched, SgdConfig(), rng)

    def test_schedule_column_count_must_match(self, rng):
        model = tiny_conv_net(rng)
        lid = model.conv_layers()[0][0]
        sched = PruningSchedule({lid: 0.5}, {lid: 999}, update_every=1)
        with pytest.raises(ConfigError):
            PruningRun(model, small_dataset(), sched, SgdConfig(), rng)
