"""Streaming measurements as a flow of window-truncated random matrices.

A measurement stream of ``p`` channels is cut into consecutive windows of
``n_g`` samples; ``q`` consecutive windows form one :class:`MatrixFlow`, the
unit on which the covariance-equality test runs.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, DimensionError, PreconditionError
from .validation import MIN_WINDOW, check_window_array


@dataclass(frozen=True)
class WindowMatrix:
    """One ``p x n_g`` block of consecutive samples (channels in rows)."""

    data: np.ndarray

    def __post_init__(self):
        arr = check_window_array(self.data, min_samples=MIN_WINDOW)
        arr = np.array(arr, dtype=np.float64, copy=True)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def p(self) -> int:
        return self.data.shape[0]

    @property
    def n_g(self) -> int:
        return self.data.shape[1]

    def __eq__(self, other):
        if not isinstance(other, WindowMatrix):
            return NotImplemented
        return self.data.shape == other.data.shape and bool(np.array_equal(self.data, other.data))

    __hash__ = None


@dataclass(frozen=True)
class MatrixFlow:
    """An ordered sequence of ``q >= 2`` windows sharing ``p`` and ``n_g``."""

    windows: tuple

    def __post_init__(self):
        wins = tuple(w if isinstance(w, WindowMatrix) else WindowMatrix(w) for w in self.windows)
        if len(wins) < 2:
            raise PreconditionError(f"a flow needs q >= 2 windows, got {len(wins)}")
        shapes = {w.data.shape for w in wins}
        if len(shapes) != 1:
            raise DimensionError(f"windows in a flow must share (p, n_g); got {sorted(shapes)}")
        object.__setattr__(self, "windows", wins)

    @classmethod
    def from_array(cls, arr) -> "MatrixFlow":
        """Build from a ``(q, p, n_g)`` array."""
        arr = np.asarray(arr, dtype=float)
        if arr.ndim != 3:
            raise DimensionError(f"expected a (q, p, n_g) array, got ndim={arr.ndim}")
        return cls(tuple(WindowMatrix(a) for a in arr))

    @classmethod
    def from_columns(cls, columns, q: int) -> "MatrixFlow":
        """Split a ``p x (q*n_g)`` block column-wise into ``q`` windows."""
        cols = np.asarray(columns, dtype=float)
        if cols.ndim != 2 or cols.shape[1] % q:
            raise DimensionError(f"cannot split {cols.shape} into {q} equal windows")
        return cls(tuple(WindowMatrix(c) for c in np.split(cols, q, axis=1)))

    @property
    def q(self) -> int:
        return len(self.windows)

    @property
    def p(self) -> int:
        return self.windows[0].p

    @property
    def n_g(self) -> int:
        return self.windows[0].n_g

    def as_array(self) -> np.ndarray:
        return np.stack([w.data for w in self.windows])

    def columns(self) -> np.ndarray:
        """Concatenate the windows back into a ``p x (q*n_g)`` block."""
        return np.concatenate([w.data for w in self.windows], axis=1)

    def __iter__(self):
        return iter(self.windows)

    def __len__(self):
        return len(self.windows)


@dataclass
class StreamCursor:
    """Single-writer accumulator turning sample columns into complete flows."""

    p: int
    n_g: int
    q: int
    flows_emitted: int = 0
    _buffer: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.p < 1:
            raise PreconditionError("p must be positive")
        if self.n_g < MIN_WINDOW:
            raise PreconditionError(f"n_g must be at least {MIN_WINDOW}, got {self.n_g}")
        if self.q < 2:
            raise PreconditionError(f"q must be at least 2, got {self.q}")
        if self._buffer is None:
            self._buffer = np.empty((self.p, 0))

    @property
    def flow_size(self) -> int:
        return self.q * self.n_g

    @property
    def buffered(self) -> int:
        return self._buffer.shape[1]

    def push(self, columns) -> list[MatrixFlow]:
        """Append columns; return the flows completed by this push."""
        return ingest_samples(self, columns)


def _as_column_block(columns, p: int) -> np.ndarray:
    if isinstance(columns, np.ndarray) and columns.ndim == 2:
        block = np.asarray(columns, dtype=float)
        if block.shape[0] != p:
            raise DimensionError(f"expected {p} channels per column, got {block.shape[0]}")
    else:
        cols = list(columns)
        if not cols:
            return np.empty((p, 0))
        for k, c in enumerate(cols):
            if np.ndim(c) != 1 or len(c) != p:
                raise DimensionError(f"column {k} has length {np.size(c)}, expected {p}")
        block = np.asarray(cols, dtype=float).T
    if not np.all(np.isfinite(block)):
        bad = int(np.argwhere(~np.isfinite(block))[0][1])
        raise DataError(f"column {bad} contains a non-finite entry")
    return block


def ingest_samples(cursor: StreamCursor, columns) -> list[MatrixFlow]:
    """Feed sample columns to ``cursor`` and return every flow they complete.

    ``columns`` is either a sequence of length-``p`` vectors or a ``p x m``
    array. Leftover columns stay buffered until the next call.
    """
    block = _as_column_block(columns, cursor.p)
    buf = np.concatenate([cursor._buffer, block], axis=1) if block.shape[1] else cursor._buffer
    size = cursor.flow_size
    k = buf.shape[1] // size
    flows = [MatrixFlow.from_columns(buf[:, i * size:(i + 1) * size], cursor.q) for i in range(k)]
    cursor._buffer = buf[:, k * size:].copy()
    cursor.flows_emitted += k
    return flows


def read_csv_columns(path, p: int | None = None, *, orientation: str = "rows",
                     header: bool = False) -> np.ndarray:
    """Parse a numeric CSV into a ``p x T`` column block.

    ``orientation="rows"`` means one row per time sample (``p`` fields);
    ``"columns"`` means one row per channel.
    """
    if orientation not in ("rows", "columns"):
        raise PreconditionError(f"orientation must be 'rows' or 'columns', got {orientation!r}")
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if header and lineno == 1:
                continue
            if not row or all(not f.strip() for f in row):
                continue
            try:
                vals = [float(f) for f in row]
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: cannot parse {exc.args[0]}") from None
            if not all(np.isfinite(vals)):
                raise DataError(f"{path}:{lineno}: non-finite value")
            if rows and len(vals) != len(rows[0]):
                raise DimensionError(
                    f"{path}:{lineno}: expected {len(rows[0])} fields, got {len(vals)}"
                )
            rows.append(vals)
    if not rows:
        return np.empty((p or 0, 0))
    arr = np.asarray(rows, dtype=float)
    block = arr.T if orientation == "rows" else arr
    if p is not None and block.shape[0] != p:
        raise DimensionError(f"{path}: found {block.shape[0]} channels, expected p={p}")
    return block


def load_csv(path, p: int, n_g: int, q: int, *, orientation: str = "rows",
             header: bool = False) -> list[MatrixFlow]:
    """Load a CSV stream and partition it into complete flows.

    Equivalent to feeding the file's columns to a fresh :class:`StreamCursor`.
    """
    block = read_csv_columns(path, p, orientation=orientation, header=header)
    cursor = StreamCursor(p, n_g, q)
    if block.shape[1] == 0:
        return []
    return ingest_samples(cursor, block)


def format_float(x: float) -> str:
    """17-significant-digit decimal that round-trips exactly."""
    return format(float(x), ".17g")


def write_csv(path, columns, *, orientation: str = "rows") -> None:
    """Write a ``p x T`` column block (or a sequence of flows) as CSV."""
    if isinstance(columns, MatrixFlow):
        block = columns.columns()
    elif isinstance(columns, (list, tuple)) and columns and isinstance(columns[0], MatrixFlow):
        block = np.concatenate([f.columns() for f in columns], axis=1)
    else:
        block = np.asarray(columns, dtype=float)
    table = block.T if orientation == "rows" else block
    buf = io.StringIO()
    for row in table:
        buf.write(",".join(format_float(v) for v in row))
        buf.write("\n")
    Path(path).write_text(buf.getvalue(), encoding="utf-8")
