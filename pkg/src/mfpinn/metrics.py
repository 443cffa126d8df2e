"""Error metrics against the oracle test grid."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import DimensionError, MetricError
from .heat import LabeledSet

ERROR_FIELD_COLUMNS = ["x_m", "t_s", "abs_err_C"]


def relative_l2(pred, truth) -> float:
    """sqrt(sum((pred - truth)^2) / sum(truth^2))."""
    pred = np.asarray(pred, dtype=np.float64).ravel()
    truth = np.asarray(truth, dtype=np.float64).ravel()
    if pred.size != truth.size or truth.size == 0:
        raise DimensionError(f"relative_l2 needs equal nonempty vectors, got {pred.size} and {truth.size}")
    denom = float(np.dot(truth, truth))
    if denom == 0.0:
        raise MetricError("relative L2 is undefined for an all-zero reference")
    diff = pred - truth
    value = float(np.sqrt(np.dot(diff, diff) / denom))
    if not np.isfinite(value):
        raise MetricError(f"relative L2 is not finite ({value})")
    return value


@dataclass
class ErrorField:
    """Pointwise |T_pred - T_true| in C over the test grid."""

    x: np.ndarray
    t: np.ndarray
    abs_err: np.ndarray

    def __len__(self) -> int:
        return self.abs_err.size

    @property
    def max(self) -> float:
        return float(self.abs_err.max())

    @property
    def argmax(self) -> tuple[float, float]:
        """(x, t) of the largest error."""
        i = int(np.argmax(self.abs_err))
        return float(self.x[i]), float(self.t[i])

    def max_in(self, t_min: float = -np.inf, t_max: float = np.inf) -> float:
        mask = (self.t >= t_min) & (self.t <= t_max)
        return float(self.abs_err[mask].max()) if np.any(mask) else 0.0

    def max_outside(self, t_min: float, t_max: float) -> float:
        mask = (self.t < t_min) | (self.t > t_max)
        return float(self.abs_err[mask].max()) if np.any(mask) else 0.0

    def write_csv(self, path: str | Path, header: str | None = None) -> None:
        with open(path, "w", newline="") as fh:
            if header:
                for line in header.splitlines():
                    fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(ERROR_FIELD_COLUMNS)
            for row in zip(self.x.tolist(), self.t.tolist(), self.abs_err.tolist()):
                w.writerow([repr(v) for v in row])


def read_error_field_csv(path: str | Path) -> ErrorField:
    with open(path, newline="") as fh:
        rows = list(csv.reader(line for line in fh if not line.startswith("#")))
    if not rows or rows[0] != ERROR_FIELD_COLUMNS:
        raise DimensionError(f"{path}: expected header {','.join(ERROR_FIELD_COLUMNS)}")
    data = np.array([[float(v) for v in r] for r in rows[1:]]).reshape(-1, 3)
    return ErrorField(data[:, 0], data[:, 1], data[:, 2])


def error_field(prediction: Callable | np.ndarray, truth: LabeledSet) -> ErrorField:
    """Absolute error of ``prediction`` on the grid ``truth``.

    ``prediction`` is either a callable f(x_m, t_s) -> C or an array already
    evaluated on the grid.
    """
    values = prediction(truth.x, truth.t) if callable(prediction) else prediction
    values = np.asarray(values, dtype=np.float64)
    if values.shape != truth.temperature.shape:
        raise DimensionError(f"prediction shape {values.shape} does not match the grid {truth.temperature.shape}")
    return ErrorField(truth.x.copy(), truth.t.copy(), np.abs(values - truth.temperature))
