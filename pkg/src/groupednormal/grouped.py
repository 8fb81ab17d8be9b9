"""
Grouped (binned count) data containers.

A :class:`GroupedTable` holds a d-dimensional tensor of non-negative counts
together with one :class:`Axis` of bin edges per dimension.  Bins are
half-open, ``[lo, hi)``, and the outermost edges may be ``-inf``/``+inf``.

CSV layout is long format, one row per cell::

    lo,hi,count                          # d = 1
    lo_1,hi_1,lo_2,hi_2,...,count        # any d

Infinite edges are written as ``-inf`` / ``inf`` (case-insensitive on read).
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass
from importlib import resources
from os import PathLike
from typing import Iterator, Sequence

import numpy as np

from .errors import (
    IndexOutOfRange,
    MalformedCSV,
    MalformedEdge,
    NegativeCount,
    ShapeMismatch,
)

__all__ = [
    "Axis",
    "Rectangle",
    "GroupedTable",
    "parse_ext_real",
    "format_ext_real",
    "parse_grouped_csv",
    "read_grouped_csv",
    "to_csv",
    "write_grouped_csv",
    "cell_rectangle",
    "marginal",
    "bin_samples",
    "load_galton",
]


def parse_ext_real(token: str) -> float:
    """Parse a finite decimal or the symbols ``-inf``/``inf``/``+inf``."""
    s = token.strip()
    low = s.lower()
    if low in ("inf", "+inf"):
        return math.inf
    if low == "-inf":
        return -math.inf
    try:
        value = float(s)
    except ValueError:
        raise MalformedCSV(f"not a number: {token!r}") from None
    if not math.isfinite(value):
        # rejects nan and spellings such as 'infinity'
        raise MalformedCSV(f"not a finite number or +/-inf: {token!r}")
    return value


def format_ext_real(value: float) -> str:
    if value == math.inf:
        return "inf"
    if value == -math.inf:
        return "-inf"
    return repr(float(value))


class Axis:
    """Strictly increasing bin edges of one dimension (``k + 1`` values)."""

    __slots__ = ("_edges",)

    def __init__(self, edges: Sequence[float]):
        e = np.array([float(x) for x in edges], dtype=float)
        if e.ndim != 1 or e.size < 2:
            raise MalformedEdge("an axis needs at least two edges")
        if np.isnan(e).any():
            raise MalformedEdge("edges may not be NaN")
        if not np.all(np.diff(e) > 0):
            raise MalformedEdge(f"edges must be strictly increasing: {e.tolist()}")
        if e[0] == math.inf or e[-1] == -math.inf or not np.all(np.isfinite(e[1:-1])):
            raise MalformedEdge("only the first edge may be -inf and only the last +inf")
        e.setflags(write=False)
        self._edges = e

    @property
    def edges(self) -> np.ndarray:
        return self._edges

    @property
    def k(self) -> int:
        """Number of bins."""
        return self._edges.size - 1

    @property
    def lower(self) -> np.ndarray:
        return self._edges[:-1]

    @property
    def upper(self) -> np.ndarray:
        return self._edges[1:]

    def interior_width(self) -> float:
        """Typical finite bin width (median over bins with two finite edges)."""
        w = np.diff(self._edges)
        w = w[np.isfinite(w)]
        if w.size == 0:
            return 1.0
        return float(np.median(w))

    def __eq__(self, other):
        return isinstance(other, Axis) and np.array_equal(self._edges, other._edges)

    def __hash__(self):
        return hash(self._edges.tobytes())

    def __repr__(self):
        return f"Axis({[format_ext_real(x) for x in self._edges]})"


@dataclass(frozen=True, eq=False)
class Rectangle:
    """Product of half-open intervals ``[lower_j, upper_j)``."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float)).copy()
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float)).copy()
        if lo.shape != hi.shape or lo.ndim != 1:
            raise MalformedEdge("lower and upper must be 1-D of equal length")
        if np.isnan(lo).any() or np.isnan(hi).any() or not np.all(lo < hi):
            raise MalformedEdge(f"need lower < upper in every dimension: {lo}, {hi}")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def interval(cls, lo: float, hi: float) -> "Rectangle":
        return cls(np.array([lo]), np.array([hi]))

    @classmethod
    def whole_space(cls, d: int) -> "Rectangle":
        return cls(np.full(d, -np.inf), np.full(d, np.inf))

    @property
    def d(self) -> int:
        return self.lower.size

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.lower) & (x < self.upper), axis=-1)

    def shift(self, c) -> "Rectangle":
        return Rectangle(self.lower + c, self.upper + c)

    def __eq__(self, other):
        return (
            isinstance(other, Rectangle)
            and np.array_equal(self.lower, other.lower)
            and np.array_equal(self.upper, other.upper)
        )

    def __repr__(self):
        parts = [
            f"[{format_ext_real(a)}, {format_ext_real(b)})"
            for a, b in zip(self.lower, self.upper)
        ]
        return "Rectangle(" + " x ".join(parts) + ")"


class GroupedTable:
    """Counts over the product grid spanned by ``axes``.

    Parameters
    ----------
    axes : sequence of Axis or sequence of edge sequences
    counts : array_like of int, shape ``(k_1, ..., k_d)``
    """

    def __init__(self, axes, counts):
        axes = tuple(a if isinstance(a, Axis) else Axis(a) for a in axes)
        if not axes:
            raise ShapeMismatch("a table needs at least one axis")
        raw = np.asarray(counts)
        if raw.ndim == 0:
            raise ShapeMismatch("counts must be an array")
        if np.issubdtype(raw.dtype, np.floating):
            if not np.all(np.isfinite(raw)) or not np.all(raw == np.round(raw)):
                raise ShapeMismatch("counts must be integers")
        c = raw.astype(np.int64)
        shape = tuple(a.k for a in axes)
        if c.shape != shape:
            raise ShapeMismatch(f"counts shape {c.shape} does not match axes {shape}")
        if (c < 0).any():
            raise NegativeCount("counts must be non-negative")
        if c.sum() < 1:
            raise ShapeMismatch("table must contain at least one observation")
        c.setflags(write=False)
        self._axes = axes
        self._counts = c

    @property
    def axes(self) -> tuple[Axis, ...]:
        return self._axes

    @property
    def counts(self) -> np.ndarray:
        return self._counts

    @property
    def d(self) -> int:
        return len(self._axes)

    @property
    def shape(self) -> tuple[int, ...]:
        return self._counts.shape

    @property
    def n(self) -> int:
        return int(self._counts.sum())

    def cell_rectangle(self, index) -> Rectangle:
        return cell_rectangle(self, index)

    def marginal(self, dim: int) -> "GroupedTable":
        return marginal(self, dim)

    def cells(self, positive_only: bool = False) -> Iterator[tuple[tuple, Rectangle, int]]:
        """Yield ``(index, rectangle, count)`` in C order."""
        for idx in np.ndindex(*self.shape):
            cnt = int(self._counts[idx])
            if positive_only and cnt == 0:
                continue
            yield idx, self.cell_rectangle(idx), cnt

    def cell_bounds(self, positive_only: bool = False):
        """Vectorised cell description.

        Returns
        -------
        lower, upper : ndarray, shape ``(m, d)``
        counts : ndarray, shape ``(m,)``
        """
        grids_lo = np.meshgrid(*[a.lower for a in self._axes], indexing="ij")
        grids_hi = np.meshgrid(*[a.upper for a in self._axes], indexing="ij")
        lower = np.stack([g.ravel() for g in grids_lo], axis=1)
        upper = np.stack([g.ravel() for g in grids_hi], axis=1)
        counts = self._counts.ravel().astype(float)
        if positive_only:
            keep = counts > 0
            lower, upper, counts = lower[keep], upper[keep], counts[keep]
        return lower, upper, counts

    def with_counts(self, counts) -> "GroupedTable":
        return GroupedTable(self._axes, counts)

    def shifted(self, offset) -> "GroupedTable":
        """Translate every edge of axis ``j`` by ``offset[j]``."""
        offset = np.broadcast_to(np.asarray(offset, dtype=float), (self.d,))
        axes = [Axis(a.edges + c) for a, c in zip(self._axes, offset)]
        return GroupedTable(axes, self._counts)

    def __eq__(self, other):
        return (
            isinstance(other, GroupedTable)
            and self._axes == other._axes
            and np.array_equal(self._counts, other._counts)
        )

    def __repr__(self):
        return f"GroupedTable(d={self.d}, shape={self.shape}, n={self.n})"


def cell_rectangle(table: GroupedTable, index) -> Rectangle:
    """Half-open rectangle of the cell at ``index`` (one bin index per axis)."""
    if isinstance(index, (int, np.integer)):
        index = (int(index),)
    index = tuple(index)
    if len(index) != table.d:
        raise IndexOutOfRange(f"expected {table.d} indices, got {len(index)}")
    lo, hi = [], []
    for i, ax in zip(index, table.axes):
        if not 0 <= i < ax.k:
            raise IndexOutOfRange(f"bin index {i} outside 0..{ax.k - 1}")
        lo.append(ax.edges[i])
        hi.append(ax.edges[i + 1])
    return Rectangle(np.array(lo), np.array(hi))


def marginal(table: GroupedTable, dim: int) -> GroupedTable:
    """One-dimensional table of counts summed over every axis except ``dim`` (0-based)."""
    if not 0 <= dim < table.d:
        raise IndexOutOfRange(f"dim {dim} outside 0..{table.d - 1}")
    other = tuple(j for j in range(table.d) if j != dim)
    return GroupedTable([table.axes[dim]], table.counts.sum(axis=other))


def _header_for(d: int) -> list[str]:
    cols = []
    for j in range(1, d + 1):
        cols += [f"lo_{j}", f"hi_{j}"]
    return cols + ["count"]


def parse_grouped_csv(text, dims: int | None = None) -> GroupedTable:
    """Parse long-format grouped CSV text (or a text stream).

    ``dims`` is inferred from the header when omitted.
    """
    stream = io.StringIO(text) if isinstance(text, str) else text
    rows = [r for r in csv.reader(stream) if r and any(f.strip() for f in r)]
    if not rows:
        raise MalformedCSV("empty input")
    header = [h.strip().lower() for h in rows[0]]
    if header == ["lo", "hi", "count"]:
        d = 1
    else:
        if len(header) < 3 or len(header) % 2 == 0:
            raise MalformedCSV(f"unrecognised header: {rows[0]}")
        d = (len(header) - 1) // 2
        if header != _header_for(d):
            raise MalformedCSV(f"unrecognised header: {rows[0]}")
    if dims is not None and dims != d:
        raise ShapeMismatch(f"header describes {d} dimension(s), expected {dims}")

    cells = {}
    intervals = [set() for _ in range(d)]
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != 2 * d + 1:
            raise MalformedCSV(f"line {lineno}: expected {2 * d + 1} fields")
        bounds = []
        for j in range(d):
            lo = parse_ext_real(row[2 * j])
            hi = parse_ext_real(row[2 * j + 1])
            if not hi > lo:
                raise MalformedEdge(f"line {lineno}: hi <= lo on dimension {j + 1}")
            bounds.append((lo, hi))
            intervals[j].add((lo, hi))
        try:
            cnt = int(row[-1].strip())
        except ValueError:
            raise MalformedCSV(f"line {lineno}: count must be an integer") from None
        if cnt < 0:
            raise NegativeCount(f"line {lineno}: negative count {cnt}")
        key = tuple(bounds)
        if key in cells:
            raise ShapeMismatch(f"line {lineno}: duplicate cell {key}")
        cells[key] = cnt

    axes = []
    for j, ivs in enumerate(intervals):
        ordered = sorted(ivs)
        edges = [ordered[0][0]]
        for lo, hi in ordered:
            if lo != edges[-1]:
                raise MalformedEdge(
                    f"dimension {j + 1}: intervals overlap or leave a gap near {lo!r}"
                )
            edges.append(hi)
        axes.append(Axis(edges))

    shape = tuple(a.k for a in axes)
    if len(cells) != math.prod(shape):
        raise ShapeMismatch(f"{len(cells)} cells do not tile the {shape} grid")
    counts = np.zeros(shape, dtype=np.int64)
    lookup = [{float(e): i for i, e in enumerate(a.lower)} for a in axes]
    for key, cnt in cells.items():
        idx = tuple(lookup[j][lo] for j, (lo, _) in enumerate(key))
        counts[idx] = cnt
    return GroupedTable(axes, counts)


def read_grouped_csv(path: str | PathLike, dims: int | None = None) -> GroupedTable:
    with open(path, newline="", encoding="utf-8") as fh:
        return parse_grouped_csv(fh.read(), dims)


def to_csv(table: GroupedTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["lo", "hi", "count"] if table.d == 1 else _header_for(table.d))
    for idx in itertools.product(*[range(k) for k in table.shape]):
        row = []
        for i, ax in zip(idx, table.axes):
            row += [format_ext_real(ax.edges[i]), format_ext_real(ax.edges[i + 1])]
        w.writerow(row + [int(table.counts[idx])])
    return buf.getvalue()


def write_grouped_csv(table: GroupedTable, path: str | PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(to_csv(table))


def bin_samples(samples, axes) -> GroupedTable:
    """Count raw observations into the half-open grid given by ``axes``.

    A value equal to an interior edge is counted in the upper cell.
    """
    axes = [a if isinstance(a, Axis) else Axis(a) for a in axes]
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1 and len(axes) == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[1] != len(axes):
        raise ShapeMismatch(f"samples of shape {x.shape} do not match {len(axes)} axes")
    idx = []
    for j, ax in enumerate(axes):
        i = np.searchsorted(ax.edges, x[:, j], side="right") - 1
        if (i < 0).any() or (i >= ax.k).any():
            raise IndexOutOfRange(f"samples fall outside axis {j}")
        idx.append(i)
    shape = tuple(a.k for a in axes)
    flat = np.ravel_multi_index(idx, shape)
    counts = np.bincount(flat, minlength=math.prod(shape)).reshape(shape)
    return GroupedTable(axes, counts)


_GALTON_FILES = {
    "2d": "galton-2d.csv",
    "parent": "galton-parent.csv",
    "child": "galton-child.csv",
}


def load_galton(which: str = "2d") -> GroupedTable:
    """Bundled Galton (1886) parent/child height table, n = 928.

    ``which`` is ``"2d"`` (parent x child), ``"parent"`` or ``"child"``.
    """
    try:
        name = _GALTON_FILES[which]
    except KeyError:
        raise ValueError(f"which must be one of {sorted(_GALTON_FILES)}") from None
    text = resources.files("groupednormal").joinpath("data").joinpath(name).read_text("utf-8")
    return parse_grouped_csv(text)
