"""Selection-quality metrics, model evaluation, and report emission.

Per-run artifacts:

* ``epochs.jsonl``: one JSON object per epoch with the fixed key set
  {epoch, strategy, selected_count, skipped_batches, commit_count,
  mean_lag, test_acc, sel_precision, sel_recall, sel_f1, epoch_wall_ms}.
* ``summary.json``: {config_hash, seed, strategy, final_acc,
  last10_mean_acc, mean_sel_f1, mean_temporal_iou, mean_cross_iou,
  mean_epoch_ms}; means are over post-warmup epochs.
* ``curves.csv``: the full per-epoch record (including IoU columns,
  loss curves, variance medians, peak memory) with repr-formatted floats
  so parsed values equal the in-memory ones exactly.
"""

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataIOError, ShapeError

log = logging.getLogger("noisylab")


def iou(a, b) -> float:
    """Intersection over union of two selections.

    Accepts boolean masks (equal length) or integer index arrays over the
    same universe.  Two empty selections count as perfect agreement (1.0);
    the occurrence is logged since it usually signals a degenerate run.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.dtype == bool or b.dtype == bool:
        if a.shape != b.shape:
            raise ShapeError(f"mask shapes differ: {a.shape} vs {b.shape}")
        inter = int(np.sum(a & b))
        union = int(np.sum(a | b))
    else:
        sa, sb = set(a.tolist()), set(b.tolist())
        inter = len(sa & sb)
        union = len(sa | sb)
    if union == 0:
        log.debug("iou of two empty selections, returning 1.0 by convention")
        return 1.0
    return inter / union


def selection_quality(selected_mask, clean_mask):
    """Precision/recall/F1 of a clean-sample selection against ground truth.

    0/0 cases (nothing selected, nothing clean, or both) resolve to 0.0.
    """
    sel = np.asarray(selected_mask, dtype=bool)
    clean = np.asarray(clean_mask, dtype=bool)
    if sel.shape != clean.shape:
        raise ShapeError(f"mask shapes differ: {sel.shape} vs {clean.shape}")
    tp = int(np.sum(sel & clean))
    n_sel = int(sel.sum())
    n_clean = int(clean.sum())
    if n_sel == 0 or n_clean == 0:
        log.debug("degenerate selection_quality: selected=%d clean=%d", n_sel, n_clean)
    precision = tp / n_sel if n_sel else 0.0
    recall = tp / n_clean if n_clean else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def evaluate(net, ds, batch_size: int = 512) -> float:
    """Test accuracy through the classification head only."""
    n = ds.n_samples
    correct = 0
    for i in range(0, n, batch_size):
        _, preds = net.classify(ds.features[i:i + batch_size])
        correct += int(np.sum(preds == ds.true_labels[i:i + batch_size]))
    return correct / n if n else 0.0


def peak_memory_bytes():
    """Best-effort peak resident set size; None when unavailable."""
    try:
        import resource
        import sys
        peak = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss
        return int(peak) if sys.platform == "darwin" else int(peak) * 1024
    except Exception:
        return None


def last10_mean(values) -> float:
    vals = list(values)
    if not vals:
        raise ShapeError("no values to average")
    return float(np.mean(vals[-10:]))


@dataclass
class EpochRecord:
    """One epoch of one run: the JSONL fields plus plotting extras."""

    epoch: int
    strategy: str
    phase: str
    lr: float
    selected_count: int
    trained_samples: int
    skipped_batches: int
    gate_on: int
    commit_count: int
    mean_lag: float | None
    test_acc: float
    sel_precision: float
    sel_recall: float
    sel_f1: float
    temporal_iou: float | None
    cross_iou: float | None
    median_var_clean: float | None
    median_var_noisy: float | None
    ce_loss: float
    bce_loss: float
    epoch_wall_ms: float
    peak_mem_bytes: int | None

    def jsonl_dict(self) -> dict:
        return {"epoch": self.epoch, "strategy": self.strategy,
                "selected_count": self.selected_count,
                "skipped_batches": self.skipped_batches,
                "commit_count": self.commit_count, "mean_lag": self.mean_lag,
                "test_acc": self.test_acc, "sel_precision": self.sel_precision,
                "sel_recall": self.sel_recall, "sel_f1": self.sel_f1,
                "epoch_wall_ms": self.epoch_wall_ms}


CURVE_COLUMNS = ["epoch", "strategy", "phase", "lr", "selected_count",
                 "trained_samples", "skipped_batches", "gate_on",
                 "commit_count", "mean_lag", "test_acc", "sel_precision",
                 "sel_recall", "sel_f1", "temporal_iou", "cross_iou",
                 "median_var_clean", "median_var_noisy", "ce_loss",
                 "bce_loss", "epoch_wall_ms", "peak_mem_bytes"]


def _cell(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return value


def summarize_records(records, config_hash: str, seed, strategy: str,
                      warmup_epochs: int) -> dict:
    """Aggregate a run's epoch records into the summary dict."""
    if not records:
        raise ShapeError("no records to summarize")
    post = [r for r in records if r.epoch >= warmup_epochs] or list(records)
    accs = [r.test_acc for r in records]
    f1s = [r.sel_f1 for r in post]
    t_ious = [r.temporal_iou for r in post if r.temporal_iou is not None]
    c_ious = [r.cross_iou for r in post if r.cross_iou is not None]
    walls = [r.epoch_wall_ms for r in post]
    return {"config_hash": config_hash, "seed": seed, "strategy": strategy,
            "final_acc": accs[-1], "last10_mean_acc": last10_mean(accs),
            "mean_sel_f1": float(np.mean(f1s)),
            "mean_temporal_iou": float(np.mean(t_ious)) if t_ious else None,
            "mean_cross_iou": float(np.mean(c_ious)) if c_ious else None,
            "mean_epoch_ms": float(np.mean(walls))}


def emit_report(records, out_dir, summary: dict) -> dict:
    """Write epochs.jsonl, summary.json, and curves.csv under out_dir."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "epochs.jsonl", "w") as fh:
            for rec in records:
                fh.write(json.dumps(rec.jsonl_dict(), sort_keys=True) + "\n")
        with open(out / "summary.json", "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
        with open(out / "curves.csv", "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CURVE_COLUMNS)
            for rec in records:
                writer.writerow([_cell(getattr(rec, col)) for col in CURVE_COLUMNS])
    except OSError as exc:
        raise DataIOError(f"cannot write report under {out}: {exc}") from exc
    return {"epochs": out / "epochs.jsonl", "summary": out / "summary.json",
            "curves": out / "curves.csv"}


def load_jsonl(path):
    """Read an epochs.jsonl back into a list of dicts."""
    try:
        with open(path) as fh:
            return [json.loads(line) for line in fh if line.strip()]
    except OSError as exc:
        raise DataIOError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataIOError(f"{path}: bad JSONL: {exc}") from exc
