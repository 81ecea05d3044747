"""Error metric and statistics for surrogate quality reports.

The per-sample error is the discrete L1-in-time relative deviation between a
predicted and a reference trajectory; reports aggregate it over a sample set
together with the raw-unit MSE.  A total-variation diagnostic quantifies how
oscillatory predictions are.
"""

from __future__ import annotations

import csv
import dataclasses
from pathlib import Path
from typing import Dict, List, Union

import numpy as np

from .dataset import SampleSet
from .neuralnet import NetworkParams, Normalizer, forward


class ZeroDenominatorError(ValueError):
    """A reference trajectory value is exactly zero at a grid point."""

    def __init__(self, index: int, sample: int = -1):
        where = f"sample {sample}, " if sample >= 0 else ""
        super().__init__(f"reference trajectory is zero at {where}grid index {index}")
        self.index = index
        self.sample = sample


@dataclasses.dataclass(frozen=True)
class ErrorReport:
    """Per-sample errors and their aggregates for one sample set."""

    role: str
    errors: np.ndarray            # (k,) per-sample relative errors
    mean: float
    stdev: float                  # population convention (divide by k)
    mse: float                    # raw-unit mean squared error
    min_abs_target: np.ndarray    # (k,) smallest |y| per sample, flags near-zeros

    def __post_init__(self):
        object.__setattr__(self, "errors", np.asarray(self.errors, dtype=np.float64))
        object.__setattr__(self, "min_abs_target", np.asarray(self.min_abs_target, dtype=np.float64))


def l1_relative_error(pred: np.ndarray, truth: np.ndarray, t0: float, tf: float) -> float:
    """Time-weighted sum of pointwise relative deviations.

    E = (tf - t0)/m * sum |pred_l - truth_l| / |truth_l|; over [0, 0.5] this
    is half the average pointwise relative error.  Exact zeros in the
    reference raise ZeroDenominatorError rather than being regularized.
    """
    pred = np.asarray(pred, dtype=np.float64).ravel()
    truth = np.asarray(truth, dtype=np.float64).ravel()
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: pred {pred.shape[0]}, truth {truth.shape[0]}")
    m = truth.shape[0]
    if m == 0:
        raise ValueError("empty trajectories")
    zeros = np.flatnonzero(truth == 0.0)
    if zeros.size:
        raise ZeroDenominatorError(int(zeros[0]))
    return float((tf - t0) / m * np.sum(np.abs(pred - truth) / np.abs(truth)))


def total_variation(traj: np.ndarray) -> float:
    """Sum of absolute successive differences along the trajectory."""
    traj = np.asarray(traj, dtype=np.float64).ravel()
    if traj.shape[0] < 2:
        raise ValueError("total variation needs at least 2 points")
    return float(np.sum(np.abs(np.diff(traj))))


def error_stats(net: NetworkParams, norm: Normalizer, sample_set: SampleSet) -> ErrorReport:
    """Evaluate the surrogate on every sample and aggregate the errors."""
    if sample_set.k == 0:
        raise ValueError("empty sample set")
    preds = forward(net, norm, sample_set.params)
    t0, tf = sample_set.grid.t0, sample_set.grid.tf
    errors = np.empty(sample_set.k)
    for i in range(sample_set.k):
        try:
            errors[i] = l1_relative_error(preds[i], sample_set.targets[i], t0, tf)
        except ZeroDenominatorError as exc:
            raise ZeroDenominatorError(exc.index, sample=i) from None
    diff = preds - sample_set.targets
    return ErrorReport(
        role=sample_set.role,
        errors=errors,
        mean=float(np.mean(errors)),
        stdev=float(np.std(errors)),
        mse=float(np.mean(diff * diff)),
        min_abs_target=np.min(np.abs(sample_set.targets), axis=1),
    )


def write_report_csv(report: ErrorReport, path: Union[str, Path]) -> None:
    """Per-sample errors, recomputable into the aggregates."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample", "error", "min_abs_target"])
        for i, (e, t) in enumerate(zip(report.errors, report.min_abs_target)):
            writer.writerow([i, repr(float(e)), repr(float(t))])


_ROLE_ORDER = ("train", "validation", "test")


def format_error_table(reports: Dict[str, Dict[str, ErrorReport]]) -> str:
    """Text table: one mean block and one st.dev. block, nets as rows and
    sample sets as columns."""
    roles = [r for r in _ROLE_ORDER if any(r in by_role for by_role in reports.values())]
    label_width = max([len(label) for label in reports] + [8])
    header = "  ".join([" " * label_width] + [f"{r:>12}" for r in roles])
    lines: List[str] = []
    for block, attr in (("mean", "mean"), ("st.dev.", "stdev")):
        lines.append(block)
        lines.append(header)
        for label, by_role in reports.items():
            cells = []
            for r in roles:
                rep = by_role.get(r)
                cells.append(f"{getattr(rep, attr):>12.3f}" if rep is not None else " " * 12)
            lines.append("  ".join([f"{label:<{label_width}}"] + cells))
        lines.append("")
    return "\n".join(lines).rstrip() + "\n"
