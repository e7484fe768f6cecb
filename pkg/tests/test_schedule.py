"""Training-schedule tests: identifier-table semantics, commit replay,
error-flow accounting, the effect-rate gate, warm-up behavior, reduction
cases that collapse each strategy onto standard training, and the jump
schedule's skip/commit bookkeeping."""

import numpy as np
import pytest

from noisylab.codebook import derive_codebook
from noisylab.data import NoiseSpec, gen_blobs, inject_noise
from noisylab.errors import ConfigError, ShapeError
from noisylab.model import DualHeadNet, TrainConfig
from noisylab.numeric import RngStream
from noisylab.schedule import (STRATEGIES, IdentifierTable, ScheduleConfig,
                               _gate, build_run_state, commit_pending,
                               error_flow, run_epoch)
from noisylab.selection import SelectionConfig


def make_state(strategy, epochs=6, warmup=2, jump_step=None, effect_rate=1.0,
               tau=0.001, keep=0.5, seed=5):
    """72-sample, 5-iterations-per-epoch run for fast schedule checks."""
    train, _ = gen_blobs(3, 4, 30, 1.0, RngStream(seed).child(0))
    noisy = inject_noise(train, NoiseSpec("symmetric", 0.3), RngStream(seed).child(1))
    cb = derive_codebook(16, 3)
    targets = cb.targets_for(noisy.noisy_labels)
    tc = TrainConfig(epochs=epochs, warmup_epochs=warmup, batch_size=16,
                     hidden_width=8)
    nets = [DualHeadNet.create(4, 3, 16, 8, 2, tc.temperature,
                               RngStream(seed).child(2))]
    if strategy == "cross_update":
        nets.append(DualHeadNet.create(4, 3, 16, 8, 2, tc.temperature,
                                       RngStream(seed).child(3)))
    sc = ScheduleConfig(strategy=strategy, effect_rate=effect_rate,
                        jump_step=jump_step)
    sel = SelectionConfig(tau=tau, small_loss_keep_ratio=keep)
    state = build_run_state(noisy, targets, nets, tc, sel, sc,
                            RngStream(seed).child(4), RngStream(seed).child(5))
    return state, noisy


def snapshot(net):
    return [p.copy() for p in net.parameters()]


def params_equal(a, b):
    return all(np.array_equal(x, y) for x, y in zip(a, b))


class TestScheduleConfig:
    def test_strategy_names(self):
        assert STRATEGIES == ("standard", "self_update", "cross_update",
                              "jump_update")

    def test_rejects_unknown_strategy(self):
        with pytest.raises(ConfigError):
            ScheduleConfig(strategy="teleport")

    def test_rejects_bad_effect_rate(self):
        for r in (0.0, 1.5, -0.1):
            with pytest.raises(ConfigError):
                ScheduleConfig(effect_rate=r)

    def test_rejects_small_jump_step(self):
        with pytest.raises(ConfigError):
            ScheduleConfig(jump_step=1)


class TestIdentifierTable:
    def test_initial_state(self):
        t = IdentifierTable(5, 2)
        assert t.active.all() and t.pending.all()
        assert np.all(t.produced_at == -1)
        assert np.all(t.active_produced_at == -1)
        assert t.commit_count == 0

    def test_write_touches_pending_only(self):
        t = IdentifierTable(4, 2)
        t.write(np.array([0, 2]), np.array([False, False]), iteration=3)
        assert t.active.all()
        assert np.array_equal(t.pending, [False, True, False, True])
        assert np.array_equal(t.produced_at, [3, -1, 3, -1])

    def test_commit_copies_pending(self):
        t = IdentifierTable(3, 2)
        t.write(np.arange(3), np.zeros(3, dtype=bool), iteration=1)
        commit_pending(t)
        assert not t.active.any()
        assert np.all(t.active_produced_at == 1)
        assert t.commit_count == 1
        # later writes do not leak into active until the next commit
        t.write(np.array([1]), np.array([True]), iteration=2)
        assert not t.active[1]
        t.commit()
        assert t.active[1]

    def test_commit_without_writes_idempotent(self):
        t = IdentifierTable(3, 2)
        t.write(np.arange(3), np.array([True, False, True]), iteration=0)
        t.commit()
        first = t.active.copy()
        t.commit()
        assert np.array_equal(t.active, first)
        assert t.commit_count == 2

    def test_interleaved_ops_match_replay_oracle(self):
        """Random write/commit sequences: active always equals the last
        committed pending snapshot."""
        rng = np.random.default_rng(0)
        t = IdentifierTable(20, 2)
        mirror_pending = np.ones(20, dtype=bool)
        mirror_active = np.ones(20, dtype=bool)
        for step in range(500):
            if rng.uniform() < 0.8:
                idx = rng.choice(20, size=rng.integers(1, 8), replace=False)
                flags = rng.uniform(size=idx.size) < 0.5
                t.write(idx, flags, iteration=step)
                mirror_pending[idx] = flags
            else:
                t.commit()
                mirror_active = mirror_pending.copy()
            assert np.array_equal(t.active, mirror_active)
            assert np.array_equal(t.pending, mirror_pending)

    def test_write_shape_mismatch(self):
        t = IdentifierTable(4, 2)
        with pytest.raises(ShapeError):
            t.write(np.array([0, 1]), np.array([True]), iteration=0)

    def test_rejects_degenerate_sizes(self):
        with pytest.raises(ConfigError):
            IdentifierTable(0, 2)
        with pytest.raises(ConfigError):
            IdentifierTable(5, 1)


class TestErrorFlow:
    def test_subflow_counts(self):
        assert error_flow("self_update", 100, 640).subflows == 1
        assert error_flow("cross_update", 100, 640).subflows == 2
        assert error_flow("jump_update", 100, 640).subflows == 640
        assert error_flow("standard", 100, 640).subflows == 1

    def test_standard_accumulates_nothing(self):
        assert error_flow("standard", 500, 10).accumulations == 0

    def test_floor_division(self):
        flow = error_flow("cross_update", 101, 10)
        assert flow.per_subflow == 50
        assert flow.per_subflow * flow.subflows <= flow.accumulations

    def test_unknown_strategy(self):
        with pytest.raises(ConfigError):
            error_flow("mystery", 1, 1)


class TestGate:
    def test_rate_one_always_on(self):
        state, _ = make_state("self_update", effect_rate=1.0)
        assert all(_gate(state) for _ in range(200))

    def test_empirical_rate_half(self):
        state, _ = make_state("self_update", effect_rate=0.5)
        hits = sum(_gate(state) for _ in range(100_000))
        assert abs(hits / 100_000 - 0.5) < 0.01

    def test_seeded_gate_sequence_reproducible(self):
        a, _ = make_state("self_update", effect_rate=0.3, seed=9)
        b, _ = make_state("self_update", effect_rate=0.3, seed=9)
        assert [_gate(a) for _ in range(50)] == [_gate(b) for _ in range(50)]


class TestBuildRunState:
    def test_default_jump_step_is_iterations_per_epoch(self):
        state, _ = make_state("jump_update")
        assert state.iters_per_epoch == 5
        assert state.jump_step == 5

    def test_jump_step_bounds_checked(self):
        # 4 post-warmup epochs x 5 iterations: 21 is out of range, 20 is not
        with pytest.raises(ConfigError):
            make_state("jump_update", jump_step=21)
        state, _ = make_state("jump_update", jump_step=20)
        assert state.jump_step == 20

    def test_cross_update_needs_two_nets(self):
        train, _ = gen_blobs(3, 4, 30, 1.0, RngStream(1).child(0))
        cb = derive_codebook(16, 3)
        tc = TrainConfig(epochs=4, warmup_epochs=1, batch_size=16, hidden_width=8)
        net = DualHeadNet.create(4, 3, 16, 8, 2, 2.0, RngStream(1).child(2))
        with pytest.raises(ConfigError):
            build_run_state(train, cb.targets_for(train.noisy_labels), [net],
                            tc, SelectionConfig(), ScheduleConfig(strategy="cross_update"),
                            RngStream(1).child(4), RngStream(1).child(5))

    def test_targets_must_cover_dataset(self):
        state, noisy = make_state("standard")
        cb = derive_codebook(16, 3)
        with pytest.raises(ShapeError):
            build_run_state(noisy, cb.targets[:3], state.nets,
                            state.train_cfg, state.sel_cfg, state.sched_cfg,
                            RngStream(0), RngStream(1))


class TestWarmup:
    @pytest.mark.parametrize("strategy", STRATEGIES)
    def test_trains_everything_and_never_commits(self, strategy):
        state, noisy = make_state(strategy)
        stats = run_epoch(state, 0)
        assert stats.phase == "warmup"
        assert stats.iterations == 5
        assert stats.trained_samples == noisy.n_samples
        assert stats.skipped_batches == 0
        assert stats.gate_on == 0
        assert stats.commit_count == 0
        if strategy == "jump_update":
            assert state.table.active.all()  # untouched until first commit
            assert stats.selected_count == int(stats.produced_flags.sum())

    def test_zero_warmup_starts_training_immediately(self):
        state, _ = make_state("standard", epochs=4, warmup=0)
        assert run_epoch(state, 0).phase == "train"

    def test_cross_warmup_trains_both_nets(self):
        state, _ = make_state("cross_update")
        before = [snapshot(net) for net in state.nets]
        run_epoch(state, 0)
        for net, prev in zip(state.nets, before):
            assert not params_equal(snapshot(net), prev)


class TestStandard:
    def test_selects_everything(self):
        state, noisy = make_state("standard")
        for epoch in range(state.train_cfg.epochs):
            stats = run_epoch(state, epoch)
            assert stats.selected_count == noisy.n_samples
            assert stats.skipped_batches == 0


class TestReductions:
    def test_self_update_with_full_keep_matches_standard(self):
        """keep_ratio 1.0 selects every batch row, so the parameter
        trajectory is bit-identical to standard training."""
        std, _ = make_state("standard", keep=1.0)
        slf, _ = make_state("self_update", keep=1.0)
        for epoch in range(std.train_cfg.epochs):
            run_epoch(std, epoch)
            run_epoch(slf, epoch)
        assert params_equal(snapshot(std.nets[0]), snapshot(slf.nets[0]))

    def test_jump_update_with_huge_tau_matches_standard(self):
        """tau beyond any reachable variance flags everything clean; the
        jump machinery then trains on full batches like standard."""
        std, _ = make_state("standard")
        jump, _ = make_state("jump_update", tau=1e9)
        for epoch in range(std.train_cfg.epochs):
            run_epoch(std, epoch)
            run_epoch(jump, epoch)
        assert params_equal(snapshot(std.nets[0]), snapshot(jump.nets[0]))


class TestSelfUpdate:
    def test_gate_off_iterations_train_full_batches(self):
        state, noisy = make_state("self_update", effect_rate=0.01, epochs=4,
                                  warmup=1)
        for epoch in range(1, 4):
            stats = run_epoch(state, epoch)
            if stats.gate_on == 0:
                assert stats.trained_samples == noisy.n_samples

    def test_gated_iterations_train_selected_rows_only(self):
        state, noisy = make_state("self_update", effect_rate=1.0, keep=0.5)
        run_epoch(state, 0)
        run_epoch(state, 1)
        stats = run_epoch(state, 2)
        assert stats.gate_on == stats.iterations
        assert stats.trained_samples < noisy.n_samples
        # ceil(0.5 * batch) per batch: 8+8+8+8+4 of the 72 samples
        assert stats.trained_samples == 36


class TestCrossUpdate:
    def test_produces_both_selections(self):
        state, _ = make_state("cross_update")
        for epoch in range(3):
            stats = run_epoch(state, epoch)
        assert stats.produced_flags_peer is not None
        assert stats.produced_flags.any() and stats.produced_flags_peer.any()

    def test_trains_both_nets_post_warmup(self):
        state, _ = make_state("cross_update")
        run_epoch(state, 0)
        run_epoch(state, 1)
        before = [snapshot(net) for net in state.nets]
        run_epoch(state, 2)
        for net, prev in zip(state.nets, before):
            assert not params_equal(snapshot(net), prev)


class TestJumpUpdate:
    def test_commit_cadence_one_per_epoch_at_default_step(self):
        state, _ = make_state("jump_update")
        counts = []
        for epoch in range(state.train_cfg.epochs):
            counts.append(run_epoch(state, epoch).commit_count)
        assert counts == [0, 0, 1, 2, 3, 4]

    def test_first_post_warmup_epoch_has_no_lag_yet(self):
        """Until the first commit, the active table still holds the initial
        all-True flags with sentinel provenance, so no lag is measurable."""
        state, _ = make_state("jump_update")
        run_epoch(state, 0)
        run_epoch(state, 1)
        first = run_epoch(state, 2)
        assert first.mean_lag is None
        second = run_epoch(state, 3)
        assert second.mean_lag is not None
        # flags applied in epoch 4 were produced in epoch 3: one epoch of lag
        assert state.iters_per_epoch <= second.mean_lag <= 2 * state.iters_per_epoch

    def test_all_false_active_table_skips_every_batch(self):
        state, _ = make_state("jump_update", jump_step=20)
        run_epoch(state, 0)
        run_epoch(state, 1)
        state.table.active[:] = False
        before = snapshot(state.nets[0])
        stats = run_epoch(state, 2)  # jump_step 20 defers any commit
        assert stats.skipped_batches == stats.iterations == 5
        assert stats.trained_samples == 0
        assert params_equal(snapshot(state.nets[0]), before)

    def test_selection_shrinks_under_noise(self):
        state, noisy = make_state("jump_update")
        stats = None
        for epoch in range(state.train_cfg.epochs):
            stats = run_epoch(state, epoch)
        assert stats.selected_count < noisy.n_samples
