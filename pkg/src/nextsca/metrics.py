"""Merit functions and run traces."""

import csv
from dataclasses import dataclass, field, fields

import numpy as np

from .problem import stationarity_residual, sum_gradient

CSV_HEADER = ("n", "comm", "J", "D", "NMSE", "U", "track_err")


def disagreement(X):
    """``D = (1/I) sum_i ||x_i - x_bar||^2`` for stacked states ``X``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return float(np.mean(np.sum((X - X.mean(axis=0)) ** 2, axis=1)))


def nmse(x_bar, truth):
    truth = np.asarray(truth, dtype=float)
    denom = float(truth @ truth)
    if denom == 0:
        raise ValueError("NMSE is undefined for a zero truth vector")
    diff = np.asarray(x_bar, dtype=float) - truth
    return float(diff @ diff) / denom


def stationarity_gap(problem, x_bar):
    """``J`` evaluated at the network average."""
    return stationarity_residual(problem, x_bar)


def tracking_error(problem, X, Y):
    """``max_i ||y_i - (1/I) sum_j grad f_j(x_i)||``."""
    I = problem.n_agents
    return max(
        float(np.linalg.norm(Y[i] - sum_gradient(problem, X[i]) / I)) for i in range(I)
    )


@dataclass
class MetricRow:
    n: int
    comm: int
    J: float
    D: float
    NMSE: float = None
    U: float = np.nan
    track_err: float = None
    wall_time: float = field(default=0.0, compare=False)

    def csv_fields(self):
        def fmt(v):
            return "NA" if v is None else f"{v:.17g}"
        return [str(self.n), str(self.comm), fmt(self.J), fmt(self.D),
                fmt(self.NMSE), fmt(self.U), fmt(self.track_err)]


def metric_row(problem, X, n, comm, Y=None, wall_time=0.0):
    x_bar = X.mean(axis=0)
    return MetricRow(
        n=n,
        comm=comm,
        J=stationarity_gap(problem, x_bar),
        D=disagreement(X),
        NMSE=None if problem.truth is None else nmse(x_bar, problem.truth),
        U=problem.value(x_bar),
        track_err=None if Y is None else tracking_error(problem, X, Y),
        wall_time=wall_time,
    )


class RunTrace:
    """Rows of :class:`MetricRow`, one per cadence tick."""

    def __init__(self, rows=None):
        self.rows = list(rows or [])

    def append(self, row):
        if self.rows and row.comm < self.rows[-1].comm:
            raise ValueError("communication count must be nondecreasing")
        self.rows.append(row)

    def __len__(self):
        return len(self.rows)

    def __getitem__(self, k):
        return self.rows[k]

    def column(self, name):
        if name not in {f.name for f in fields(MetricRow)}:
            raise KeyError(name)
        return np.array([np.nan if getattr(r, name) is None else getattr(r, name) for r in self.rows])

    @property
    def final(self):
        return self.rows[-1]

    def first_reaching(self, threshold, metric="J"):
        """First row whose ``metric`` is at or below ``threshold``, or None."""
        for row in self.rows:
            if getattr(row, metric) <= threshold:
                return row
        return None

    def to_csv(self, stream):
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for row in self.rows:
            writer.writerow(row.csv_fields())


def read_trace_csv(stream):
    rows = []
    reader = csv.reader(stream)
    header = next(reader)
    if tuple(header) != CSV_HEADER:
        raise ValueError(f"unexpected header {header}")
    for rec in reader:
        vals = [None if v == "NA" else float(v) for v in rec[2:]]
        rows.append(MetricRow(int(rec[0]), int(rec[1]), *vals))
    return RunTrace(rows)
