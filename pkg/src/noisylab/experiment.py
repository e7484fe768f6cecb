"""End-to-end runs: data -> noise -> training -> metrics -> artifacts.

Every run (one strategy, one seed) derives all of its randomness from a
single root stream via fixed child keys, so two runs with the same config
and seed are bit-identical, and runs that share a seed share the same
dataset, noise pattern, initial weights, and batch order regardless of
strategy.  That pairing is what makes wall-time and accuracy comparisons
between strategies meaningful.
"""

import csv
import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .codebook import default_code_bits, derive_codebook
from .config import ExperimentConfig, canonical_dict, config_hash
from .data import NoiseSpec, gen_blobs, inject_noise, load_csv, make_instance_weights
from .errors import ConfigError, DataIOError, NumericError
from .metrics import (EpochRecord, emit_report, evaluate, iou,
                      peak_memory_bytes, selection_quality, summarize_records)
from .model import DualHeadNet, save_checkpoint
from .numeric import RngStream
from .schedule import build_run_state, error_flow, run_epoch
from .selection import BatchFlags, dump_decisions_csv

# Child-stream keys of the per-run root stream.  Fixed so that adding a
# consumer never perturbs existing ones.
STREAM_DATA = 0
STREAM_NOISE = 1
STREAM_NET_A = 2
STREAM_NET_B = 3
STREAM_SHUFFLE = 4
STREAM_GATE = 5
STREAM_IDN = 6


@dataclass
class CellResult:
    """Output of one strategy x seed cell."""

    strategy: str
    seed: int
    effect_rate: float
    records: list
    summary: dict
    state: object
    out_dir: Path | None


def build_dataset(cfg: ExperimentConfig, seed: int):
    """Construct (train, test) for a run, injecting noise when asked.

    CSV datasets that already contain disagreeing label columns are used
    as-is; injection only happens on clean training data with epsilon > 0.
    """
    root = RngStream(seed)
    ds_cfg = cfg.dataset
    if ds_cfg.kind == "blobs":
        train, test = gen_blobs(ds_cfg.classes, ds_cfg.dim, ds_cfg.per_class,
                                ds_cfg.spread, root.child(STREAM_DATA),
                                ds_cfg.center_scale)
    else:
        train = load_csv(ds_cfg.train_path, num_classes=ds_cfg.classes, split="train")
        test = load_csv(ds_cfg.test_path, num_classes=train.num_classes, split="test")
    if train.clean_mask.all() and cfg.noise.epsilon > 0:
        weights = None
        if cfg.noise.kind == "instance":
            weights = make_instance_weights(train.features.shape[1],
                                            train.num_classes, root.child(STREAM_IDN))
        spec = NoiseSpec(kind=cfg.noise.kind, epsilon=cfg.noise.epsilon,
                         class_map=cfg.noise.class_map, idn_weights=weights)
        train = inject_noise(train, spec, root.child(STREAM_NOISE))
    return train, test


def run_cell(cfg: ExperimentConfig, strategy: str, seed: int,
             effect_rate: float | None = None, out_dir=None,
             trace: bool = False, write_outputs: bool = True) -> CellResult:
    """Train one strategy on one seed and collect per-epoch records."""
    root = RngStream(seed)
    train, test = build_dataset(cfg, seed)
    n_classes = train.num_classes
    code_bits = cfg.train.code_bits or default_code_bits(n_classes)
    codebook = derive_codebook(code_bits, n_classes)
    targets = codebook.targets_for(train.noisy_labels)

    nets = [DualHeadNet.create(train.features.shape[1], n_classes, code_bits,
                               cfg.train.hidden_width, cfg.train.hidden_layers,
                               cfg.train.temperature, root.child(STREAM_NET_A))]
    if strategy == "cross_update":
        nets.append(DualHeadNet.create(train.features.shape[1], n_classes, code_bits,
                                       cfg.train.hidden_width, cfg.train.hidden_layers,
                                       cfg.train.temperature, root.child(STREAM_NET_B)))

    sched = dataclasses.replace(cfg.schedule, strategy=strategy,
                                effect_rate=cfg.schedule.effect_rate
                                if effect_rate is None else effect_rate)
    state = build_run_state(train, targets, nets, cfg.train, cfg.selection,
                            sched, root.child(STREAM_SHUFFLE),
                            root.child(STREAM_GATE), trace=trace,
                            collect_details=cfg.dump_selection)

    out_path = Path(out_dir) if out_dir is not None else None
    records = []
    prev_produced = None
    for epoch in range(cfg.train.epochs):
        try:
            stats = run_epoch(state, epoch)
        except NumericError as exc:
            raise NumericError(f"epoch {epoch} ({strategy}, seed {seed}): {exc}") from exc
        acc = evaluate(nets[0], test)
        precision, recall, f1 = selection_quality(stats.produced_flags, train.clean_mask)
        temporal = iou(stats.produced_flags, prev_produced) if prev_produced is not None else None
        cross = (iou(stats.produced_flags, stats.produced_flags_peer)
                 if stats.produced_flags_peer is not None else None)
        med_clean = med_noisy = None
        if stats.produced_variance is not None:
            var = stats.produced_variance
            ok = np.isfinite(var)
            if (ok & train.clean_mask).any():
                med_clean = float(np.median(var[ok & train.clean_mask]))
            if (ok & ~train.clean_mask).any():
                med_noisy = float(np.median(var[ok & ~train.clean_mask]))
        records.append(EpochRecord(
            epoch=epoch, strategy=strategy, phase=stats.phase, lr=stats.lr,
            selected_count=stats.selected_count,
            trained_samples=stats.trained_samples,
            skipped_batches=stats.skipped_batches, gate_on=stats.gate_on,
            commit_count=stats.commit_count, mean_lag=stats.mean_lag,
            test_acc=acc, sel_precision=precision, sel_recall=recall,
            sel_f1=f1, temporal_iou=temporal, cross_iou=cross,
            median_var_clean=med_clean, median_var_noisy=med_noisy,
            ce_loss=stats.ce_loss, bce_loss=stats.bce_loss,
            epoch_wall_ms=stats.wall_ms, peak_mem_bytes=peak_memory_bytes()))
        prev_produced = stats.produced_flags
        if out_path is not None and cfg.dump_selection and stats.produced_det is not None:
            flags = BatchFlags(detection=stats.produced_det,
                               classifier=stats.produced_cls,
                               combined=stats.produced_flags,
                               variance=stats.produced_variance,
                               bce=stats.produced_bce)
            sel_dir = out_path / "selection"
            sel_dir.mkdir(parents=True, exist_ok=True)
            dump_decisions_csv(sel_dir / f"epoch_{epoch:03d}.csv",
                               np.arange(train.n_samples), flags, train.clean_mask)

    summary = summarize_records(records, config_hash(cfg), seed, strategy,
                                cfg.train.warmup_epochs)
    flow = error_flow(strategy, state.accumulation_events, train.n_samples)
    summary["error_flow"] = {"accumulations": flow.accumulations,
                             "subflows": flow.subflows,
                             "per_subflow": flow.per_subflow}
    if effect_rate is not None:
        summary["effect_rate"] = effect_rate
    if out_path is not None and write_outputs:
        emit_report(records, out_path, summary)
        save_checkpoint(nets[0], out_path / "model.ckpt",
                        epoch=cfg.train.epochs - 1, seed=seed,
                        config=canonical_dict(cfg))
    return CellResult(strategy=strategy, seed=seed,
                      effect_rate=sched.effect_rate, records=records,
                      summary=summary, state=state,
                      out_dir=out_path if write_outputs else None)


def _cell_dir(base: Path, label: str, seed: int) -> Path:
    return base / f"{label}-seed{seed}"


def run_experiment(cfg: ExperimentConfig, out_root=None) -> list:
    """The `train` entry point: the configured strategy over all seeds."""
    base = Path(out_root if out_root is not None else cfg.out_dir) / config_hash(cfg)
    results = []
    for seed in cfg.seeds:
        out = _cell_dir(base, cfg.schedule.strategy, seed)
        results.append(run_cell(cfg, cfg.schedule.strategy, seed, out_dir=out))
    return results


def compare_strategies(cfg: ExperimentConfig, out_root=None) -> list:
    """The `compare` entry point: strategy set or effect-rate sweep.

    Returns comparison rows (dicts) and writes comparison.csv; each cell
    also writes its own artifacts under <out>/<hash>/<label>-seed<seed>/.
    """
    base = Path(out_root if out_root is not None else cfg.out_dir) / config_hash(cfg)
    if cfg.effect_rates:
        cells = [(f"{cfg.schedule.strategy}-r{r:g}", cfg.schedule.strategy, r)
                 for r in cfg.effect_rates]
    else:
        strategies = cfg.strategies or ["standard", "self_update",
                                        "cross_update", "jump_update"]
        if len(strategies) < 2:
            raise ConfigError("compare needs at least 2 strategies or an effect_rates list")
        cells = [(s, s, None) for s in strategies]

    rows = []
    for label, strategy, rate in cells:
        cell_results = []
        for seed in cfg.seeds:
            out = _cell_dir(base, label, seed)
            cell_results.append(run_cell(cfg, strategy, seed,
                                         effect_rate=rate, out_dir=out))
        last10 = [r.summary["last10_mean_acc"] for r in cell_results]
        t_ious = [r.summary["mean_temporal_iou"] for r in cell_results
                  if r.summary["mean_temporal_iou"] is not None]
        c_ious = [r.summary["mean_cross_iou"] for r in cell_results
                  if r.summary["mean_cross_iou"] is not None]
        walls = [r.summary["mean_epoch_ms"] for r in cell_results]
        rows.append({
            "label": label, "strategy": strategy,
            "effect_rate": cell_results[0].effect_rate,
            "n_seeds": len(cfg.seeds),
            "mean_last10_acc": float(np.mean(last10)),
            "std_last10_acc": float(np.std(last10)),
            "mean_temporal_iou": float(np.mean(t_ious)) if t_ious else None,
            "mean_cross_iou": float(np.mean(c_ious)) if c_ious else None,
            "mean_epoch_ms": float(np.mean(walls)),
        })

    columns = ["label", "strategy", "effect_rate", "n_seeds", "mean_last10_acc",
               "std_last10_acc", "mean_temporal_iou", "mean_cross_iou",
               "mean_epoch_ms"]
    try:
        base.mkdir(parents=True, exist_ok=True)
        with open(base / "comparison.csv", "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(columns)
            for row in rows:
                writer.writerow([("" if row[c] is None else
                                  repr(row[c]) if isinstance(row[c], float) else row[c])
                                 for c in columns])
    except OSError as exc:
        raise DataIOError(f"cannot write comparison table under {base}: {exc}") from exc
    return rows
