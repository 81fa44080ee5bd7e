"""Pair-counting (dis)similarity measures between partitions.

All real-valued scores are computed in double precision from exact integer
pair counts, so the only rounding is the final division.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .core import build_contingency, check_comparable, check_ensemble, comb2, pair_counts
from .exceptions import DegenerateMetricError, DegenerateRangeError

__all__ = [
    "DistanceModel",
    "sdd",
    "average_sod",
    "rand_index",
    "adjusted_rand_index",
    "dl_distance",
    "fit_qd",
    "qd_distance",
]

KINDS = ("sdd", "dl", "qd")
BASES = ("sdd", "dl")


def _stats(p, q):
    table = build_contingency(p, q)
    n11 = int(comb2(table.counts).sum())
    theta_p = int(comb2(table.row_sizes).sum())
    theta_q = int(comb2(table.col_sizes).sum())
    return n11, theta_p, theta_q, comb2(table.n)


def sdd(p, q):
    """Symmetric difference distance: pixel pairs the partitions disagree on."""
    pc = pair_counts(build_contingency(p, q))
    return pc.n10 + pc.n01


def average_sod(ensemble, s):
    """Normalized sum of SDD from ``s`` to every ensemble member, in [0, 1]."""
    members = check_ensemble(ensemble)
    check_comparable(members[0], s)
    n = s.n
    total = sum(sdd(m, s) for m in members)
    return 2.0 * total / (len(members) * n * (n - 1))


def rand_index(p, q):
    """Fraction of pixel pairs on which ``p`` and ``q`` agree."""
    pc = pair_counts(build_contingency(p, q))
    return 1.0 - (pc.n10 + pc.n01) / pc.total


def _ari_from_stats(n11, theta_p, theta_q, n_pairs):
    expected = theta_p * theta_q / n_pairs
    denom = 0.5 * (theta_p + theta_q) - expected
    return (n11 - expected) / denom


def _is_degenerate(theta_p, theta_q, n_pairs):
    # the ARI denominator vanishes exactly when both partitions are
    # all-singletons or both are a single segment
    return ((theta_p == 0) & (theta_q == 0)) | (
        (theta_p == n_pairs) & (theta_q == n_pairs))


def adjusted_rand_index(p, q):
    """Adjusted Rand index under the generalized hypergeometric model.

    Raises
    ------
    DegenerateMetricError
        If both partitions are all-singletons or both are one segment, where
        the chance correction is undefined.
    """
    n11, theta_p, theta_q, n_pairs = _stats(p, q)
    if _is_degenerate(theta_p, theta_q, n_pairs):
        raise DegenerateMetricError(
            "ARI denominator is zero (both partitions trivial)")
    return _ari_from_stats(n11, theta_p, theta_q, n_pairs)


def dl_distance(p, q):
    """``1 - ARI``; zero for identical partitions, can exceed 1."""
    return 1.0 - adjusted_rand_index(p, q)


@dataclass(frozen=True)
class DistanceModel:
    """Pairwise distance used by the fusion loop.

    Parameters
    ----------
    kind : {"sdd", "dl", "qd"}
        Raw symmetric distance, ``1 - ARI``, or a min/max-normalized basis
        distance.
    qd_min, qd_max : float, optional
        Normalization range for ``kind="qd"``.
    basis : {"sdd", "dl"}
        Distance that ``"qd"`` normalizes.
    """

    kind: str = "sdd"
    qd_min: float | None = None
    qd_max: float | None = None
    basis: str = "sdd"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.basis not in BASES:
            raise ValueError(f"basis must be one of {BASES}, got {self.basis!r}")
        if self.kind == "qd":
            if self.qd_min is None or self.qd_max is None:
                raise ValueError("qd model needs qd_min and qd_max")
            if not self.qd_max > self.qd_min:
                raise DegenerateRangeError(
                    f"qd_max ({self.qd_max}) must exceed qd_min ({self.qd_min})")

    @classmethod
    def qd_default(cls, n):
        """QD over raw SDD with the untrained range ``[0, N(N-1)/2]``."""
        return cls("qd", 0.0, float(comb2(n)), "sdd")

    def from_stats(self, n11, theta_p, theta_q, n_pairs):
        """Distance from pair statistics; vectorized over numpy arrays.

        Returns
        -------
        values : float or ndarray
        n_clamped : int
            Number of QD values that fell outside the learned range.
        """
        kind = self.basis if self.kind == "qd" else self.kind
        if kind == "sdd":
            values = theta_p + theta_q - 2 * n11
        else:
            values = _dl_from_stats(n11, theta_p, theta_q, n_pairs)
        if self.kind != "qd":
            return values, 0
        span = self.qd_max - self.qd_min
        scaled = (np.asarray(values, dtype=np.float64) - self.qd_min) / span
        n_clamped = int(np.count_nonzero((scaled < 0.0) | (scaled > 1.0)))
        scaled = np.clip(scaled, 0.0, 1.0)
        return (scaled if scaled.ndim else float(scaled)), n_clamped

    def distance(self, p, q):
        return self.from_stats(*_stats(p, q))[0]

    __call__ = distance

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))


def _dl_from_stats(n11, theta_p, theta_q, n_pairs):
    # Degenerate ARI only arises for identical partitions, so the distance
    # is 0 there; this keeps d(p, p) = 0 inside the optimizer.
    degenerate = _is_degenerate(theta_p, theta_q, n_pairs)
    if np.ndim(degenerate) == 0:
        if degenerate:
            return 0.0
        return 1.0 - _ari_from_stats(n11, theta_p, theta_q, n_pairs)
    n11 = np.asarray(n11, dtype=np.float64)
    theta_q = np.asarray(theta_q, dtype=np.float64)
    theta_p = np.asarray(theta_p, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = 1.0 - _ari_from_stats(n11, theta_p, theta_q, float(n_pairs))
    out[degenerate] = 0.0
    return out


def fit_qd(training_pairs, basis="sdd"):
    """Learn the QD normalization range from training partition pairs.

    Parameters
    ----------
    training_pairs : list of (Partition, Partition)
    basis : {"sdd", "dl"}

    Returns
    -------
    DistanceModel
        ``kind="qd"`` with the min and max basis distance over the pairs.
    """
    base = DistanceModel(basis)
    values = [float(base.distance(p, q)) for p, q in training_pairs]
    if len(values) < 2 or max(values) == min(values):
        raise DegenerateRangeError(
            "need at least two training pairs with distinct distances")
    return DistanceModel("qd", min(values), max(values), basis)


def qd_distance(model, p, q):
    """Basis distance mapped to [0, 1] by the learned range, clamped."""
    if model.kind != "qd":
        raise ValueError("qd_distance needs a model with kind='qd'")
    return model.distance(p, q)
