"""Training-loop strategies: plain SGD, small-loss self/cross updates, and
the double-buffered jump-update schedule.

The jump schedule keeps two boolean buffers over the whole training set.
Each iteration (1) writes freshly produced clean flags for its batch into
the pending buffer, (2) trains only on rows whose *active* flag is set,
and (3) every ``jump_step`` iterations copies pending over active.  A mask
therefore takes effect at least one full commit window after it was
produced: the network state that produced it is an ancestor, in update
steps, of the state that consumes it, never a peer from the same window.

All strategies share an effect-rate gate r in (0, 1]: one Bernoulli draw
per iteration decides whether the selection mask is applied or the update
falls back to the full batch.  Lower r throttles how often selection
errors feed back into training.  r = 1 always applies the mask.

Every strategy trains both heads with the combined objective, so wall-time
differences between strategies come from scheduling alone, not from model
surgery.
"""

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .data import NoisyDataset
from .errors import ConfigError, ShapeError
from .model import (DualHeadNet, SgdState, TrainConfig, cosine_lr,
                    losses_and_grads_from_forward, per_sample_cross_entropy,
                    sgd_step)
from .numeric import RngStream
from .selection import SelectionConfig, batch_flags, small_loss_select

STRATEGIES = ("standard", "self_update", "cross_update", "jump_update")


@dataclass
class ScheduleConfig:
    strategy: str = "jump_update"
    effect_rate: float = 1.0
    jump_step: int | None = None  # None resolves to iterations-per-epoch

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if not (0.0 < self.effect_rate <= 1.0):
            raise ConfigError(f"effect_rate must lie in (0, 1], got {self.effect_rate}")
        if self.jump_step is not None and self.jump_step < 2:
            raise ConfigError(f"jump_step must be >= 2, got {self.jump_step}")


class IdentifierTable:
    """Double-buffered per-sample clean flags.

    ``active`` is what training reads; ``pending`` is what fresh identifiers
    overwrite; :meth:`commit` copies pending over active.  Both buffers
    start all-True so training before the first commit sees every sample.
    ``produced_at`` records the iteration that last wrote each pending
    entry, ``active_produced_at`` the same for the active buffer; the
    initial sentinel is -1.
    """

    def __init__(self, n_samples: int, jump_step: int):
        if n_samples < 1:
            raise ConfigError(f"need at least 1 sample, got {n_samples}")
        if jump_step < 2:
            raise ConfigError(f"jump_step must be >= 2, got {jump_step}")
        self.n_samples = n_samples
        self.jump_step = jump_step
        self.active = np.ones(n_samples, dtype=bool)
        self.pending = np.ones(n_samples, dtype=bool)
        self.produced_at = np.full(n_samples, -1, dtype=np.int64)
        self.active_produced_at = np.full(n_samples, -1, dtype=np.int64)
        self.commit_count = 0

    def write(self, indices, flags, iteration: int) -> None:
        idx = np.asarray(indices)
        flags = np.asarray(flags, dtype=bool)
        if idx.shape != flags.shape:
            raise ShapeError(f"indices shape {idx.shape} != flags shape {flags.shape}")
        self.pending[idx] = flags
        self.produced_at[idx] = iteration

    def commit(self) -> None:
        self.active = self.pending.copy()
        self.active_produced_at = self.produced_at.copy()
        self.commit_count += 1


def commit_pending(table: IdentifierTable) -> IdentifierTable:
    table.commit()
    return table


@dataclass
class ErrorFlow:
    """How many accumulation events a run routed into how many sub-flows.

    ``per_subflow`` uses floor division; the remainder is not modeled.
    """

    strategy: str
    accumulations: int
    subflows: int
    per_subflow: int


def error_flow(strategy: str, accumulations: int, n_samples: int) -> ErrorFlow:
    if strategy not in STRATEGIES:
        raise ConfigError(f"unknown strategy {strategy!r}")
    subflows = {"standard": 1, "self_update": 1, "cross_update": 2,
                "jump_update": n_samples}[strategy]
    if strategy == "standard":
        accumulations = 0
    return ErrorFlow(strategy=strategy, accumulations=accumulations,
                     subflows=subflows, per_subflow=accumulations // subflows)


@dataclass
class JumpTrace:
    """Instrumentation log of the jump bookkeeping, for replay validation.

    Within one iteration events happen in the order write -> application ->
    commit; events carry the global iteration index so a replay can merge
    the three lists deterministically.
    """

    writes: list = field(default_factory=list)        # (iter, idx, flags)
    applications: list = field(default_factory=list)  # (iter, post_index, idx, mask, produced_at)
    commits: list = field(default_factory=list)       # (iter, post_count, active, active_produced_at)


@dataclass
class EpochStats:
    epoch: int
    phase: str  # "warmup" or "train"
    strategy: str
    lr: float
    iterations: int
    trained_samples: int
    selected_count: int
    skipped_batches: int
    gate_on: int
    commit_count: int
    mean_lag: float | None
    ce_loss: float
    bce_loss: float
    wall_ms: float
    produced_flags: np.ndarray
    produced_flags_peer: np.ndarray | None = None
    produced_variance: np.ndarray | None = None
    produced_det: np.ndarray | None = None
    produced_cls: np.ndarray | None = None
    produced_bce: np.ndarray | None = None


@dataclass
class RunState:
    """Everything one training run mutates across epochs."""

    strategy: str
    data: NoisyDataset
    targets: np.ndarray  # (n, K) codeword bit targets for the noisy labels
    nets: list
    opts: list
    train_cfg: TrainConfig
    sel_cfg: SelectionConfig
    sched_cfg: ScheduleConfig
    shuffle_rng: RngStream
    gate_rng: RngStream
    jump_step: int
    iters_per_epoch: int
    table: IdentifierTable | None = None
    trace: JumpTrace | None = None
    collect_details: bool = False  # keep per-sample det/cls/bce for dumps
    global_iter: int = 0
    post_iter: int = 0
    accumulation_events: int = 0


def build_run_state(data: NoisyDataset, targets: np.ndarray, nets: list,
                    train_cfg: TrainConfig, sel_cfg: SelectionConfig,
                    sched_cfg: ScheduleConfig, shuffle_rng: RngStream,
                    gate_rng: RngStream, trace: bool = False,
                    collect_details: bool = False) -> RunState:
    n = data.n_samples
    if sched_cfg.strategy == "cross_update" and len(nets) < 2:
        raise ConfigError("cross_update needs two networks")
    iters_per_epoch = math.ceil(n / train_cfg.batch_size)
    jump_step = sched_cfg.jump_step if sched_cfg.jump_step is not None else max(2, iters_per_epoch)
    total_train_iters = (train_cfg.epochs - train_cfg.warmup_epochs) * iters_per_epoch
    if sched_cfg.strategy == "jump_update" and not 2 <= jump_step <= total_train_iters:
        raise ConfigError(
            f"jump_step {jump_step} outside [2, {total_train_iters}] for this run length")
    if np.asarray(targets).shape[0] != n:
        raise ShapeError(f"targets rows {np.asarray(targets).shape[0]} != dataset size {n}")
    table = IdentifierTable(n, jump_step) if sched_cfg.strategy == "jump_update" else None
    opts = [SgdState(net.parameters()) for net in nets]
    return RunState(strategy=sched_cfg.strategy, data=data, targets=targets,
                    nets=nets, opts=opts, train_cfg=train_cfg, sel_cfg=sel_cfg,
                    sched_cfg=sched_cfg, shuffle_rng=shuffle_rng,
                    gate_rng=gate_rng, jump_step=jump_step,
                    iters_per_epoch=iters_per_epoch, table=table,
                    trace=JumpTrace() if (trace and sched_cfg.strategy == "jump_update") else None,
                    collect_details=collect_details)


def _batches(state: RunState):
    order = state.shuffle_rng.permutation(state.data.n_samples)
    bs = state.train_cfg.batch_size
    return [order[i:i + bs] for i in range(0, order.size, bs)]


def _update(state: RunState, which: int, res, idx, mask, lr: float):
    """One masked SGD step on net ``which``; returns (ce, bce, count) or
    None when the mask selects nothing (the batch is skipped)."""
    if mask is not None and not mask.any():
        return None
    labels = state.data.noisy_labels[idx]
    targets = state.targets[idx]
    net = state.nets[which]
    ce, bce, grads = losses_and_grads_from_forward(
        net, res, labels, targets, state.train_cfg.bce_weight, mask)
    sgd_step(net.parameters(), grads, state.opts[which], lr,
             state.train_cfg.momentum, state.train_cfg.weight_decay)
    count = int(mask.sum()) if mask is not None else idx.size
    return ce, bce, count


def _gate(state: RunState) -> bool:
    return bool(state.gate_rng.uniform() < state.sched_cfg.effect_rate)


def warmup_epoch(state: RunState, epoch: int) -> EpochStats:
    """Full-batch training for every strategy; the jump table only buffers
    pending identifiers (no commits), so the active table stays all-True."""
    t0 = time.perf_counter()
    cfg = state.train_cfg
    lr = cosine_lr(epoch, cfg.epochs, cfg.lr0, cfg.lr_min)
    n = state.data.n_samples
    produced = np.ones(n, dtype=bool)
    produced_peer = np.ones(n, dtype=bool) if state.strategy == "cross_update" else None
    jump = state.strategy == "jump_update"
    details = jump and state.collect_details
    variance = np.full(n, np.nan) if jump else None
    det = np.zeros(n, dtype=bool) if details else None
    cls = np.zeros(n, dtype=bool) if details else None
    bce_per = np.full(n, np.nan) if details else None
    ce_sum = bce_sum = 0.0
    updates = trained = iterations = 0
    for idx in _batches(state):
        x = state.data.features[idx]
        labels = state.data.noisy_labels[idx]
        res = state.nets[0].forward(x)
        if jump:
            flags = batch_flags(res.z, state.targets[idx], res.probs, labels, state.sel_cfg)
            state.table.write(idx, flags.combined, state.global_iter)
            if state.trace is not None:
                state.trace.writes.append((state.global_iter, idx.copy(), flags.combined.copy()))
            produced[idx] = flags.combined
            variance[idx] = flags.variance
            if details:
                det[idx] = flags.detection
                cls[idx] = flags.classifier
                bce_per[idx] = flags.bce
        elif state.strategy in ("self_update", "cross_update"):
            losses = per_sample_cross_entropy(res.probs, labels)
            produced[idx] = small_loss_select(losses, state.sel_cfg.small_loss_keep_ratio)
        out = _update(state, 0, res, idx, None, lr)
        ce_sum += out[0]
        bce_sum += out[1]
        trained += out[2]
        updates += 1
        if state.strategy == "cross_update":
            res_b = state.nets[1].forward(x)
            losses_b = per_sample_cross_entropy(res_b.probs, labels)
            produced_peer[idx] = small_loss_select(losses_b, state.sel_cfg.small_loss_keep_ratio)
            out_b = _update(state, 1, res_b, idx, None, lr)
            ce_sum += out_b[0]
            bce_sum += out_b[1]
            updates += 1
        state.global_iter += 1
        iterations += 1
    wall = (time.perf_counter() - t0) * 1000.0
    return EpochStats(epoch=epoch, phase="warmup", strategy=state.strategy, lr=lr,
                      iterations=iterations, trained_samples=trained,
                      selected_count=int(produced.sum()), skipped_batches=0,
                      gate_on=0,
                      commit_count=state.table.commit_count if state.table else 0,
                      mean_lag=None, ce_loss=ce_sum / max(updates, 1),
                      bce_loss=bce_sum / max(updates, 1), wall_ms=wall,
                      produced_flags=produced, produced_flags_peer=produced_peer,
                      produced_variance=variance, produced_det=det,
                      produced_cls=cls, produced_bce=bce_per)


def _standard_epoch(state: RunState, epoch: int) -> EpochStats:
    t0 = time.perf_counter()
    cfg = state.train_cfg
    lr = cosine_lr(epoch, cfg.epochs, cfg.lr0, cfg.lr_min)
    n = state.data.n_samples
    ce_sum = bce_sum = 0.0
    updates = trained = iterations = 0
    for idx in _batches(state):
        res = state.nets[0].forward(state.data.features[idx])
        out = _update(state, 0, res, idx, None, lr)
        ce_sum += out[0]
        bce_sum += out[1]
        trained += out[2]
        updates += 1
        state.global_iter += 1
        state.post_iter += 1
        iterations += 1
    wall = (time.perf_counter() - t0) * 1000.0
    return EpochStats(epoch=epoch, phase="train", strategy=state.strategy, lr=lr,
                      iterations=iterations, trained_samples=trained,
                      selected_count=n, skipped_batches=0, gate_on=0,
                      commit_count=0, mean_lag=None,
                      ce_loss=ce_sum / max(updates, 1),
                      bce_loss=bce_sum / max(updates, 1), wall_ms=wall,
                      produced_flags=np.ones(n, dtype=bool))


def _self_epoch(state: RunState, epoch: int) -> EpochStats:
    t0 = time.perf_counter()
    cfg = state.train_cfg
    lr = cosine_lr(epoch, cfg.epochs, cfg.lr0, cfg.lr_min)
    n = state.data.n_samples
    produced = np.zeros(n, dtype=bool)
    ce_sum = bce_sum = 0.0
    updates = trained = iterations = skipped = gate_on = 0
    for idx in _batches(state):
        labels = state.data.noisy_labels[idx]
        res = state.nets[0].forward(state.data.features[idx])
        losses = per_sample_cross_entropy(res.probs, labels)
        sel = small_loss_select(losses, state.sel_cfg.small_loss_keep_ratio)
        produced[idx] = sel
        gated = _gate(state)
        out = _update(state, 0, res, idx, sel if gated else None, lr)
        if out is None:
            skipped += 1
        else:
            ce_sum += out[0]
            bce_sum += out[1]
            trained += out[2]
            updates += 1
        if gated:
            gate_on += 1
            state.accumulation_events += 1
        state.global_iter += 1
        state.post_iter += 1
        iterations += 1
    wall = (time.perf_counter() - t0) * 1000.0
    return EpochStats(epoch=epoch, phase="train", strategy=state.strategy, lr=lr,
                      iterations=iterations, trained_samples=trained,
                      selected_count=int(produced.sum()), skipped_batches=skipped,
                      gate_on=gate_on, commit_count=0, mean_lag=None,
                      ce_loss=ce_sum / max(updates, 1),
                      bce_loss=bce_sum / max(updates, 1), wall_ms=wall,
                      produced_flags=produced)


def _cross_epoch(state: RunState, epoch: int) -> EpochStats:
    """Each net trains on the peer's small-loss picks; one gate draw covers
    both updates so the pair stays synchronized."""
    t0 = time.perf_counter()
    cfg = state.train_cfg
    lr = cosine_lr(epoch, cfg.epochs, cfg.lr0, cfg.lr_min)
    n = state.data.n_samples
    produced = np.zeros(n, dtype=bool)
    produced_peer = np.zeros(n, dtype=bool)
    ce_sum = bce_sum = 0.0
    updates = trained = iterations = skipped = gate_on = 0
    for idx in _batches(state):
        x = state.data.features[idx]
        labels = state.data.noisy_labels[idx]
        res_a = state.nets[0].forward(x)
        res_b = state.nets[1].forward(x)
        sel_a = small_loss_select(per_sample_cross_entropy(res_a.probs, labels),
                                  state.sel_cfg.small_loss_keep_ratio)
        sel_b = small_loss_select(per_sample_cross_entropy(res_b.probs, labels),
                                  state.sel_cfg.small_loss_keep_ratio)
        produced[idx] = sel_a
        produced_peer[idx] = sel_b
        gated = _gate(state)
        for which, res, mask in ((0, res_a, sel_b), (1, res_b, sel_a)):
            out = _update(state, which, res, idx, mask if gated else None, lr)
            if out is None:
                skipped += 1
            else:
                ce_sum += out[0]
                bce_sum += out[1]
                trained += out[2]
                updates += 1
        if gated:
            gate_on += 1
            state.accumulation_events += 1
        state.global_iter += 1
        state.post_iter += 1
        iterations += 1
    wall = (time.perf_counter() - t0) * 1000.0
    return EpochStats(epoch=epoch, phase="train", strategy=state.strategy, lr=lr,
                      iterations=iterations, trained_samples=trained,
                      selected_count=int(produced.sum()), skipped_batches=skipped,
                      gate_on=gate_on, commit_count=0, mean_lag=None,
                      ce_loss=ce_sum / max(updates, 1),
                      bce_loss=bce_sum / max(updates, 1), wall_ms=wall,
                      produced_flags=produced, produced_flags_peer=produced_peer)


def jump_train_epoch(state: RunState, epoch: int) -> EpochStats:
    """One epoch of the three-step jump schedule.

    Per iteration: write fresh identifiers to pending, train on the active
    flags (one forward pass per batch, reused for both the identifiers and
    the update), then commit pending over active when the post-warmup
    iteration count hits a multiple of the jump step.
    """
    t0 = time.perf_counter()
    cfg = state.train_cfg
    lr = cosine_lr(epoch, cfg.epochs, cfg.lr0, cfg.lr_min)
    n = state.data.n_samples
    table = state.table
    details = state.collect_details
    variance = np.full(n, np.nan)
    det = np.zeros(n, dtype=bool) if details else None
    cls = np.zeros(n, dtype=bool) if details else None
    bce_per = np.full(n, np.nan) if details else None
    lag_sum = 0
    lag_count = 0
    ce_sum = bce_sum = 0.0
    updates = trained = iterations = skipped = gate_on = 0
    for idx in _batches(state):
        labels = state.data.noisy_labels[idx]
        res = state.nets[0].forward(state.data.features[idx])
        flags = batch_flags(res.z, state.targets[idx], res.probs, labels, state.sel_cfg)
        table.write(idx, flags.combined, state.global_iter)
        variance[idx] = flags.variance
        if details:
            det[idx] = flags.detection
            cls[idx] = flags.classifier
            bce_per[idx] = flags.bce
        if state.trace is not None:
            state.trace.writes.append((state.global_iter, idx.copy(), flags.combined.copy()))
        gated = _gate(state)
        if gated:
            mask = table.active[idx]  # fancy indexing copies
            prod_at = table.active_produced_at[idx]
            known = prod_at >= 0
            lag_sum += int((state.global_iter - prod_at[known]).sum())
            lag_count += int(known.sum())
            if state.trace is not None:
                state.trace.applications.append(
                    (state.global_iter, state.post_iter, idx.copy(), mask.copy(), prod_at.copy()))
        else:
            mask = None
        out = _update(state, 0, res, idx, mask, lr)
        if out is None:
            skipped += 1
        else:
            ce_sum += out[0]
            bce_sum += out[1]
            trained += out[2]
            updates += 1
        if gated:
            gate_on += 1
            state.accumulation_events += 1
        state.post_iter += 1
        if state.post_iter % state.jump_step == 0:
            table.commit()
            if state.trace is not None:
                state.trace.commits.append((state.global_iter, state.post_iter,
                                            table.active.copy(),
                                            table.active_produced_at.copy()))
        state.global_iter += 1
        iterations += 1
    # Every sample is written exactly once per epoch, so the pending buffer
    # now holds this epoch's produced flags.
    produced = table.pending.copy()
    wall = (time.perf_counter() - t0) * 1000.0
    return EpochStats(epoch=epoch, phase="train", strategy=state.strategy, lr=lr,
                      iterations=iterations, trained_samples=trained,
                      selected_count=int(produced.sum()), skipped_batches=skipped,
                      gate_on=gate_on, commit_count=table.commit_count,
                      mean_lag=lag_sum / lag_count if lag_count else None,
                      ce_loss=ce_sum / max(updates, 1),
                      bce_loss=bce_sum / max(updates, 1), wall_ms=wall,
                      produced_flags=produced, produced_variance=variance,
                      produced_det=det, produced_cls=cls, produced_bce=bce_per)


def run_epoch(state: RunState, epoch: int) -> EpochStats:
    if epoch < state.train_cfg.warmup_epochs:
        return warmup_epoch(state, epoch)
    if state.strategy == "standard":
        return _standard_epoch(state, epoch)
    if state.strategy == "self_update":
        return _self_epoch(state, epoch)
    if state.strategy == "cross_update":
        return _cross_epoch(state, epoch)
    return jump_train_epoch(state, epoch)
