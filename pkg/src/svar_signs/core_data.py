"""Time-series containers, CSV ingestion, lag designs and companion matrices."""
from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class DataError(ValueError):
    """Raised for malformed input data."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TimeSeries:
    """T x N block of observations on a regular calendar.

    ``start`` is ``(year, subperiod)`` with a zero-based subperiod, so the
    first quarter of 1955 is ``(1955, 0)`` at ``frequency=4``.
    """

    values: np.ndarray
    names: tuple[str, ...]
    start: tuple[int, int] = (1, 0)
    frequency: int = 1

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise DataError(f"values must be a non-empty T x N matrix, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise DataError("values must all be finite")
        names = tuple(str(n) for n in self.names)
        if len(names) != v.shape[1]:
            raise DataError(f"expected {v.shape[1]} names, got {len(names)}")
        if len(set(names)) != len(names):
            raise DataError("variable names must be unique")
        if self.frequency < 1:
            raise DataError("frequency must be a positive integer")
        year, sub = self.start
        if not 0 <= sub < self.frequency:
            raise DataError(f"start subperiod {sub} outside 0..{self.frequency - 1}")
        object.__setattr__(self, "values", _readonly(v))
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "start", (int(year), int(sub)))

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def N(self) -> int:
        return self.values.shape[1]

    def period_label(self, row: int) -> str:
        """Human-readable label of 1-based ``row``."""
        year, sub = divmod(self.start[0] * self.frequency + self.start[1] + row - 1, self.frequency)
        if self.frequency == 1:
            return str(year)
        if self.frequency == 4:
            return f"{year}Q{sub + 1}"
        if self.frequency == 12:
            return f"{year}M{sub + 1:02d}"
        return f"{year}P{sub + 1}"

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.names)
            for row in self.values:
                w.writerow([repr(float(x)) for x in row])


@dataclass(frozen=True)
class DesignMatrices:
    """VAR regression ``Y = X A + U``.

    Each row of ``X`` is ``[y_{t-1}', ..., y_{t-p}', 1]``.
    """

    Y: np.ndarray
    X: np.ndarray
    p: int
    last_obs: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        Y = np.atleast_2d(np.asarray(self.Y, dtype=float))
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        if Y.shape[0] != X.shape[0]:
            raise DataError(f"Y has {Y.shape[0]} rows but X has {X.shape[0]}")
        if X.shape[1] != Y.shape[1] * self.p + 1:
            raise DataError(f"X must have N*p+1 = {Y.shape[1] * self.p + 1} columns, got {X.shape[1]}")
        object.__setattr__(self, "Y", _readonly(Y))
        object.__setattr__(self, "X", _readonly(X))
        if self.last_obs is not None:
            object.__setattr__(self, "last_obs", _readonly(np.atleast_2d(self.last_obs)))

    @property
    def T_eff(self) -> int:
        return self.Y.shape[0]

    @property
    def N(self) -> int:
        return self.Y.shape[1]

    @property
    def K(self) -> int:
        return self.X.shape[1]

    def next_regressor(self) -> np.ndarray:
        """Regressor row for the first out-of-sample period."""
        if self.last_obs is None:
            raise DataError("design was built without the trailing observations")
        lags = self.last_obs[::-1][: self.p].reshape(-1)
        return np.concatenate([lags, [1.0]])


_NUMBER = re.compile(r"^\s*[-+]?(\d+\.?\d*([eE][-+]?\d+)?|\.\d+([eE][-+]?\d+)?|inf|nan)\s*$", re.I)


def _parse_float(cell: str) -> float | None:
    if not _NUMBER.match(cell):
        return None
    return float(cell)


def load_csv(
    path: str | Path,
    header: bool | None = None,
    start: tuple[int, int] = (1, 0),
    frequency: int = 1,
) -> TimeSeries:
    """Read a rectangular numeric CSV into a :class:`TimeSeries`.

    ``header=None`` detects a header row by whether the first row parses as
    numbers. Errors name the offending 1-based data row and column.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"data file not found: {path}")
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{path}: file is empty")
    if header is None:
        header = any(_parse_float(c) is None for c in rows[0])
    names = [c.strip() for c in rows[0]] if header else None
    body = rows[1:] if header else rows
    if not body:
        raise DataError(f"{path}: no data rows")
    width = len(names) if names else len(body[0])
    values = np.empty((len(body), width))
    for i, r in enumerate(body, start=1):
        if len(r) != width:
            raise DataError(f"{path}: row {i} has {len(r)} cells, expected {width}")
        for j, cell in enumerate(r, start=1):
            x = _parse_float(cell)
            if x is None or not math.isfinite(x):
                raise DataError(f"{path}: non-numeric or non-finite cell at row {i}, column {j}: {cell!r}")
            values[i - 1, j - 1] = x
    if names is None:
        names = [f"y{j}" for j in range(1, width + 1)]
    return TimeSeries(values, tuple(names), start=start, frequency=frequency)


def build_design(ts: TimeSeries, p: int) -> DesignMatrices:
    if p < 1:
        raise DataError("lag order p must be >= 1")
    y = ts.values
    T = y.shape[0]
    if T <= p:
        raise DataError(f"need more than p={p} observations, got T={T}")
    lags = [y[p - lag : T - lag] for lag in range(1, p + 1)]
    X = np.hstack(lags + [np.ones((T - p, 1))])
    return DesignMatrices(y[p:], X, p, last_obs=y[T - p :])


_LABEL = re.compile(r"^\s*(\d{1,4})\s*(?:[QqMmPp]\s*(\d{1,2}))?\s*$")


def parse_period(label, frequency: int) -> tuple[int, int]:
    """Convert a period label to ``(year, zero-based subperiod)``.

    Accepts ``(year, sub)`` tuples, strings such as ``"2008Q3"`` (1-based
    subperiod) and fractional years such as ``2008.5`` (``year + sub/freq``).
    """
    if isinstance(label, tuple):
        year, sub = label
        return int(year), int(sub)
    if isinstance(label, str):
        m = _LABEL.match(label)
        if m is None:
            try:
                label = float(label)
            except ValueError:
                raise DataError(f"unrecognised period label {label!r}") from None
        else:
            year = int(m.group(1))
            sub = int(m.group(2)) - 1 if m.group(2) else 0
            if not 0 <= sub < frequency:
                raise DataError(f"subperiod in {label!r} outside 1..{frequency}")
            return year, sub
    x = float(label)
    year = math.floor(x)
    frac = (x - year) * frequency
    sub = round(frac)
    if abs(frac - sub) > 1e-6 or sub >= frequency:
        raise DataError(f"label {label} is not aligned to frequency {frequency}")
    return int(year), int(sub)


def period_index(ts: TimeSeries, label) -> int:
    """1-based row of ``label`` in ``ts``."""
    year, sub = parse_period(label, ts.frequency)
    offset = (year - ts.start[0]) * ts.frequency + (sub - ts.start[1])
    if not 0 <= offset < ts.T:
        raise DataError(
            f"period {label} outside sample {ts.period_label(1)}..{ts.period_label(ts.T)}"
        )
    return offset + 1


def lag_blocks(A: np.ndarray, p: int) -> list[np.ndarray]:
    """Split a K x N coefficient matrix into its ``p`` N x N lag blocks."""
    A = np.asarray(A, dtype=float)
    N = A.shape[1]
    if A.shape[0] != N * p + 1:
        raise DataError(f"coefficient matrix must be {N * p + 1} x {N}, got {A.shape}")
    return [A[l * N : (l + 1) * N] for l in range(p)]


def companion(A: np.ndarray, p: int) -> tuple[np.ndarray, np.ndarray]:
    """Companion matrix of ``y_t = sum_l A_l' y_{t-l} + c`` and the constant ``c``."""
    blocks = lag_blocks(A, p)
    N = blocks[0].shape[0]
    F = np.zeros((N * p, N * p))
    F[:N] = np.hstack([b.T for b in blocks])
    if p > 1:
        F[N:, : N * (p - 1)] = np.eye(N * (p - 1))
    return F, np.asarray(A, dtype=float)[-1].copy()

