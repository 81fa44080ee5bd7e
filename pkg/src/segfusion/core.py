"""Partitions, contingency tables and pair counting.

A partition is a dense label vector over the pixels of an image grid,
flattened row-major. Every comparison between two partitions goes through
their contingency table, so pair statistics cost O(N) rather than O(N^2).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import ComparabilityError, EmptyEnsembleError

__all__ = [
    "Partition",
    "ContingencyTable",
    "PairCounts",
    "build_contingency",
    "pair_counts",
    "comb2",
    "densify_labels",
    "check_comparable",
    "check_ensemble",
    "check_label_matrix",
]


def comb2(x):
    """Number of unordered pairs, ``x * (x - 1) // 2``, elementwise for arrays."""
    if isinstance(x, np.ndarray):
        x = x.astype(np.int64, copy=False)
        return x * (x - 1) // 2
    x = int(x)
    return x * (x - 1) // 2


def densify_labels(values):
    """Map arbitrary non-negative integer labels onto ``0..C-1``.

    Labels keep their sorted order, so already-dense input is unchanged.

    Returns
    -------
    labels : ndarray of int64
    mapping : dict
        Original value -> dense label.
    """
    values = np.asarray(values)
    if values.size == 0:
        raise ValueError("empty label array")
    if not np.issubdtype(values.dtype, np.integer):
        as_int = values.astype(np.int64)
        if not np.array_equal(as_int, values):
            raise ValueError("labels must be integers")
        values = as_int
    if values.min() < 0:
        raise ValueError("labels must be non-negative")
    uniques, dense = np.unique(values, return_inverse=True)
    mapping = {int(u): i for i, u in enumerate(uniques)}
    return dense.astype(np.int64).reshape(-1), mapping


@dataclass(frozen=True, eq=False)
class Partition:
    """A segmentation of a ``width x height`` grid into labelled segments.

    Parameters
    ----------
    labels : array-like of int, shape (N,)
        Segment label of each pixel in row-major order.
    width, height : int, optional
        Grid shape. Defaults to a single row of N pixels.
    num_labels : int, optional
        Size of the label alphabet, at least ``max(labels) + 1``.

    Partitions are immutable: the label array is copied and marked
    read-only.
    """

    labels: np.ndarray
    width: int | None = None
    height: int | None = None
    num_labels: int | None = None
    _hash: int | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        labels = np.array(self.labels, copy=True)
        if labels.ndim == 2 and self.width is None and self.height is None:
            object.__setattr__(self, "height", labels.shape[0])
            object.__setattr__(self, "width", labels.shape[1])
        labels = labels.reshape(-1)
        if labels.size and not np.issubdtype(labels.dtype, np.integer):
            as_int = labels.astype(np.int64)
            if not np.array_equal(as_int, labels):
                raise ValueError("partition labels must be integers")
            labels = as_int
        labels = labels.astype(np.int64, copy=False)
        n = labels.size
        if n < 2:
            raise ValueError(f"a partition needs at least 2 pixels, got {n}")
        if labels.min() < 0:
            raise ValueError("partition labels must be non-negative")
        width, height = self.width, self.height
        if width is None and height is None:
            width, height = n, 1
        elif width is None:
            width = n // height
        elif height is None:
            height = n // width
        if width * height != n:
            raise ValueError(f"grid {width}x{height} does not hold {n} pixels")
        top = int(labels.max()) + 1
        num_labels = top if self.num_labels is None else int(self.num_labels)
        if num_labels < top:
            raise ValueError(
                f"num_labels={num_labels} but labels reach {top - 1}"
            )
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "width", int(width))
        object.__setattr__(self, "height", int(height))
        object.__setattr__(self, "num_labels", num_labels)

    @property
    def n(self):
        return self.labels.size

    @property
    def shape(self):
        return (self.height, self.width)

    def to_image(self):
        """Labels as a ``(height, width)`` array."""
        return self.labels.reshape(self.height, self.width)

    def with_labels(self, labels, num_labels=None):
        """A new partition on the same grid."""
        return Partition(labels, self.width, self.height,
                         self.num_labels if num_labels is None else num_labels)

    def __eq__(self, other):
        if not isinstance(other, Partition):
            return NotImplemented
        return (self.shape == other.shape
                and self.num_labels == other.num_labels
                and np.array_equal(self.labels, other.labels))

    def __hash__(self):
        if self._hash is None:
            object.__setattr__(
                self, "_hash",
                hash((self.shape, self.num_labels, self.labels.tobytes())))
        return self._hash

    def __len__(self):
        return self.labels.size


@dataclass(frozen=True)
class PairCounts:
    """Classification of the N(N-1)/2 unordered pixel pairs.

    ``n11`` pairs share a segment in both partitions, ``n00`` in neither,
    ``n10`` only in the first and ``n01`` only in the second.
    """

    n11: int
    n00: int
    n10: int
    n01: int

    @property
    def total(self):
        return self.n11 + self.n00 + self.n10 + self.n01


@dataclass(frozen=True, eq=False)
class ContingencyTable:
    """Joint label counts between two partitions.

    ``counts[a, b]`` is the number of pixels labelled ``a`` in the first
    partition and ``b`` in the second.
    """

    counts: np.ndarray
    row_sizes: np.ndarray
    col_sizes: np.ndarray
    n: int

    def __post_init__(self):
        if self.counts.min(initial=0) < 0:
            raise ValueError("contingency counts must be non-negative")
        if int(self.counts.sum()) != self.n:
            raise ValueError("contingency counts do not sum to n")
        if not (np.array_equal(self.counts.sum(axis=1), self.row_sizes)
                and np.array_equal(self.counts.sum(axis=0), self.col_sizes)):
            raise ValueError("marginals do not match the table")


def check_comparable(p, q):
    if p.n != q.n:
        raise ComparabilityError(
            f"partitions cover {p.n} and {q.n} pixels; they must match")


def build_contingency(p, q):
    """Contingency table of ``p`` (rows) against ``q`` (columns) in one pass."""
    check_comparable(p, q)
    rows, cols = p.num_labels, q.num_labels
    flat = np.bincount(p.labels * cols + q.labels, minlength=rows * cols)
    counts = flat.reshape(rows, cols)
    return ContingencyTable(counts, counts.sum(axis=1), counts.sum(axis=0), p.n)


def pair_counts(table):
    """Pair counts from a contingency table via the marginal identities."""
    n11 = int(comb2(table.counts).sum())
    n10 = int(comb2(table.row_sizes).sum()) - n11
    n01 = int(comb2(table.col_sizes).sum()) - n11
    n00 = comb2(table.n) - n11 - n10 - n01
    return PairCounts(n11=n11, n00=n00, n10=n10, n01=n01)


def check_ensemble(ensemble, min_size=1):
    """Validate a list of mutually comparable partitions.

    Accepts Partition objects or raw label vectors; returns a list of
    Partition.
    """
    members = [m if isinstance(m, Partition) else Partition(m) for m in ensemble]
    if len(members) < min_size:
        if not members:
            raise EmptyEnsembleError("ensemble is empty")
        raise ValueError(
            f"need at least {min_size} partitions, got {len(members)}")
    first = members[0]
    for m in members[1:]:
        check_comparable(first, m)
    return members


def check_label_matrix(X):
    """Validate an ``(n_pixels, n_segmentations)`` integer label matrix.

    Arbitrary non-negative labels are densified column by column.
    """
    X = check_array(X, dtype=None, ensure_2d=True, ensure_min_samples=2)
    out = np.empty(X.shape, dtype=np.int64)
    for j in range(X.shape[1]):
        out[:, j], _ = densify_labels(X[:, j])
    return out
