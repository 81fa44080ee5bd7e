"""Consensus fusion by filtered stochastic best-one-element moves.

The working consensus ``s`` is improved one pixel at a time. Each
iteration draws an ensemble member ``s_k`` (a fresh random permutation of
the members per epoch), folds the matrix of distances ``d(s_k, s')`` over
all single-pixel relabelings ``s'`` into an exponentially filtered
accumulator ``H``, and applies the relabeling at the accumulator's minimum.

Per-member contingency tables against ``s`` are kept up to date as moves
are applied, which makes every distance matrix O(N*C) to build.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_is_fitted

from .core import Partition, build_contingency, check_comparable, check_ensemble, check_label_matrix, comb2
from .metrics import DistanceModel, average_sod

__all__ = [
    "FusionConfig",
    "FusionReport",
    "SegmentationFusion",
    "best_of_k",
    "delta_matrix",
    "select_move",
    "objective",
    "fuse",
]

H_INITS = ("zeros", "full")


@dataclass(frozen=True)
class FusionConfig:
    """Settings for one fusion run.

    Parameters
    ----------
    beta : float in [0, 1]
        Forgetting factor of the accumulator; 0 is memoryless.
    t_max : int
        Iteration cap T. Iteration 1 is initialization, so ``t_max - 1``
        moves are attempted.
    seed : int
        Seed of the member-selection RNG.
    distance : DistanceModel
    init : "bok" or Partition
        Best-of-K initialization, or an explicit starting partition.
    early_stop : int or None
        Patience in epochs. An epoch that does not strictly lower the
        objective counts against it; an epoch that raises the objective is
        rolled back. None runs to ``t_max``.
    h_init : {"zeros", "full"}
        Start the accumulator at zero, or at the exact objective matrix
        summed over all members.
    n_labels : int or None
        Label alphabet of the consensus. Defaults to the largest alphabet
        in the ensemble.
    keep_best : bool
        Return the lowest-objective state visited instead of the last one.
    """

    beta: float = 0.9
    t_max: int = 1000
    seed: int = 0
    distance: DistanceModel = field(default_factory=DistanceModel)
    init: object = "bok"
    early_stop: int | None = None
    h_init: str = "zeros"
    n_labels: int | None = None
    keep_best: bool = True

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")
        if int(self.t_max) < 1:
            raise ValueError(f"t_max must be >= 1, got {self.t_max}")
        if self.h_init not in H_INITS:
            raise ValueError(f"h_init must be one of {H_INITS}")
        if self.early_stop is not None and int(self.early_stop) < 1:
            raise ValueError("early_stop patience must be >= 1")
        if not (isinstance(self.init, Partition) or self.init == "bok"):
            raise ValueError("init must be 'bok' or a Partition")

    def to_dict(self):
        init = self.init if isinstance(self.init, str) else "given"
        return {
            "beta": self.beta,
            "t_max": int(self.t_max),
            "seed": int(self.seed),
            "distance": {
                "kind": self.distance.kind,
                "qd_min": self.distance.qd_min,
                "qd_max": self.distance.qd_max,
                "basis": self.distance.basis,
            },
            "init": init,
            "early_stop": self.early_stop,
            "h_init": self.h_init,
            "n_labels": self.n_labels,
            "keep_best": self.keep_best,
        }


@dataclass
class FusionReport:
    """Outcome of :func:`fuse`.

    ``objective_trace`` holds ``(iteration, average_sod)`` rows sampled at
    initialization and at the end of every epoch. ``selections`` lists the
    ensemble index drawn at each iteration.
    """

    consensus: Partition
    objective_trace: list
    iterations_run: int
    moves_applied: int
    clamp_count: int
    wall_time: float
    initial_objective: float
    final_objective: float
    stopped_early: bool = False
    config: dict = field(default_factory=dict)
    selections: list = field(default_factory=list, repr=False)

    def to_dict(self, include_timing=False):
        out = {
            "n_pixels": self.consensus.n,
            "width": self.consensus.width,
            "height": self.consensus.height,
            "n_labels": self.consensus.num_labels,
            "iterations_run": self.iterations_run,
            "moves_applied": self.moves_applied,
            "clamp_count": self.clamp_count,
            "initial_objective": self.initial_objective,
            "final_objective": self.final_objective,
            "final_average_sod": self.objective_trace[-1][1],
            "stopped_early": self.stopped_early,
            "config": self.config,
        }
        if include_timing:
            out["wall_time"] = self.wall_time
        return out

    def trace_csv(self):
        lines = ["iteration,average_sod"]
        lines += [f"{it},{val!r}" for it, val in self.objective_trace]
        return "\n".join(lines) + "\n"


class _FusionState:
    """Working consensus plus contingency tables against every member."""

    def __init__(self, members, start, n_labels, model):
        self.model = model
        self.n = start.size
        self.n_pairs = comb2(self.n)
        self.c = n_labels
        self.s = np.array(start, dtype=np.int64)
        self.rows = np.arange(self.n)
        self.member_labels = [m.labels for m in members]
        self.sizes = np.bincount(self.s, minlength=n_labels).astype(np.int64)
        self.theta_s = int(comb2(self.sizes).sum())
        probe = Partition(self.s, num_labels=n_labels)
        self.tables = []
        self.n11 = []
        self.theta_m = []
        for m in members:
            counts = build_contingency(m, probe).counts.copy()
            self.tables.append(counts)
            self.n11.append(int(comb2(counts).sum()))
            self.theta_m.append(int(comb2(counts.sum(axis=1)).sum()))

    def snapshot(self):
        return (self.s.copy(), self.sizes.copy(), self.theta_s,
                [t.copy() for t in self.tables], list(self.n11))

    def restore(self, snap):
        s, sizes, theta_s, tables, n11 = snap
        self.s, self.sizes, self.theta_s = s.copy(), sizes.copy(), theta_s
        self.tables = [t.copy() for t in tables]
        self.n11 = list(n11)

    def member_distance(self, k):
        return self.model.from_stats(
            self.n11[k], self.theta_m[k], self.theta_s, self.n_pairs)[0]

    def total_distance(self):
        return float(sum(self.member_distance(k) for k in range(len(self.tables))))

    def average_sod(self):
        total = sum(tm + self.theta_s - 2 * n11
                    for tm, n11 in zip(self.theta_m, self.n11))
        return 2.0 * total / (len(self.tables) * self.n * (self.n - 1))

    def delta(self, k):
        """Distance to member ``k`` after each single-pixel relabeling."""
        q = self.member_labels[k]
        m = self.tables[k]
        a = self.s
        rows = self.rows
        model = self.model
        base = model.basis if model.kind == "qd" else model.kind
        if base == "sdd":
            # relabeling a -> b changes SDD by
            # (n_b - 2 m[c, b]) - (n_a - 2 m[c, a]) - 1 for member label c
            # float64 holds these integers exactly below 2**53
            gain = (self.sizes[None, :] - 2 * m).astype(np.float64)
            values = gain[q]
            d_now = self.theta_m[k] + self.theta_s - 2 * self.n11[k]
            values += (d_now - 1) - values[rows, a][:, None]
            values[rows, a] = d_now
            if model.kind == "sdd":
                return values, 0
            return _qd(model, values)
        n11 = m[q]
        n11 += (self.n11[k] + 1) - n11[rows, a][:, None]
        n11[rows, a] = self.n11[k]
        theta_s = np.broadcast_to(
            self.sizes + (self.theta_s + 1), (self.n, self.c)).copy()
        theta_s -= self.sizes[a][:, None]
        theta_s[rows, a] = self.theta_s
        return model.from_stats(n11, self.theta_m[k], theta_s, self.n_pairs)

    def apply(self, i, b):
        a = self.s[i]
        self.theta_s += int(self.sizes[b]) - int(self.sizes[a]) + 1
        self.sizes[a] -= 1
        self.sizes[b] += 1
        for k, q in enumerate(self.member_labels):
            m = self.tables[k]
            c = q[i]
            self.n11[k] += int(m[c, b]) - int(m[c, a]) + 1
            m[c, a] -= 1
            m[c, b] += 1
        self.s[i] = b


def _qd(model, values):
    span = model.qd_max - model.qd_min
    scaled = (values - model.qd_min) / span
    n_clamped = int(np.count_nonzero((scaled < 0.0) | (scaled > 1.0)))
    np.clip(scaled, 0.0, 1.0, out=scaled)
    return scaled, n_clamped


def _resolve_model(distance):
    return DistanceModel() if distance is None else distance


def objective(ensemble, s, d=None, normalized=False):
    """Sum of distances from ``s`` to every ensemble member.

    With ``normalized=True`` the SDD sum is returned as an Average SOD in
    [0, 1] regardless of ``d``.
    """
    members = check_ensemble(ensemble)
    check_comparable(members[0], s)
    if normalized:
        return average_sod(members, s)
    d = _resolve_model(d)
    return float(sum(d.distance(m, s) for m in members))


def best_of_k(ensemble, d=None):
    """The ensemble member with the smallest summed distance to the others.

    Ties go to the lowest index.
    """
    members = check_ensemble(ensemble)
    d = _resolve_model(d)
    k = len(members)
    dist = np.zeros((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            dist[i, j] = dist[j, i] = d.distance(members[i], members[j])
    return members[int(np.argmin(dist.sum(axis=0)))]


def delta_matrix(s_k, s, d=None):
    """``(N, C)`` matrix of ``d(s_k, s')`` over every single-pixel relabeling.

    Entry ``(i, j)`` is the distance to ``s_k`` after pixel ``i`` of ``s``
    takes label ``j``; ``C`` is ``s.num_labels``. Built from the
    contingency table in O(N*C).
    """
    check_comparable(s_k, s)
    d = _resolve_model(d)
    state = _FusionState([s_k], s.labels, s.num_labels, d)
    return state.delta(0)[0]


def select_move(h):
    """Arg-minimum ``(i, j, value)`` of an accumulator matrix.

    Ties resolve to the smallest pixel index, then the smallest label.
    """
    h = np.asarray(h)
    flat = int(np.argmin(h))
    i, j = divmod(flat, h.shape[1])
    return i, j, float(h[i, j])


def fuse(ensemble, cfg=None):
    """Fuse an ensemble of partitions into one consensus partition.

    Parameters
    ----------
    ensemble : list of Partition
    cfg : FusionConfig, optional

    Returns
    -------
    FusionReport
    """
    cfg = FusionConfig() if cfg is None else cfg
    members = check_ensemble(ensemble)
    started = time.perf_counter()
    model = cfg.distance
    n_labels = cfg.n_labels or max(m.num_labels for m in members)
    start = best_of_k(members, model) if cfg.init == "bok" else cfg.init
    check_comparable(members[0], start)
    if start.labels.max() >= n_labels:
        raise ValueError(
            f"initial partition uses labels beyond n_labels={n_labels}")
    grid = start

    state = _FusionState(members, start.labels, n_labels, model)
    k_total = len(members)
    clamp_count = 0
    if cfg.h_init == "full":
        h = np.zeros((state.n, n_labels))
        for k in range(k_total):
            values, clamped = state.delta(k)
            h += values
            clamp_count += clamped
    else:
        h = np.zeros((state.n, n_labels))

    rng = np.random.default_rng(cfg.seed)
    initial_objective = state.total_distance()
    trace = [(1, state.average_sod())]
    best_obj, best_labels = initial_objective, state.s.copy()

    patience = cfg.early_stop
    accepted_obj = initial_objective
    snapshot = (state.snapshot(), h.copy()) if patience else None
    stall = 0
    moves = 0
    epoch_moves = 0
    order = []
    selections = []
    t = 1
    stopped_early = False
    for t in range(2, int(cfg.t_max) + 1):
        if not order:
            order = list(rng.permutation(k_total)[::-1])
            epoch_moves = 0
        k = int(order.pop())
        selections.append(k)
        values, clamped = state.delta(k)
        clamp_count += clamped
        if cfg.beta != 1.0:
            h *= cfg.beta
        h += values
        i, j, _ = select_move(h)
        if state.s[i] != j:
            state.apply(i, j)
            moves += 1
            epoch_moves += 1
        if cfg.keep_best:
            current = state.total_distance()
            if current < best_obj:
                best_obj, best_labels = current, state.s.copy()
        if order:
            continue
        # end of epoch
        if patience:
            current = state.total_distance()
            if epoch_moves == 0:
                stall += 1
            elif current > accepted_obj:
                snap, h_snap = snapshot
                state.restore(snap)
                h[...] = h_snap
                moves -= epoch_moves
                stall += 1
            else:
                stall = 0 if current < accepted_obj else stall + 1
                accepted_obj = current
                snapshot = (state.snapshot(), h.copy())
        trace.append((t, state.average_sod()))
        if patience and stall >= patience:
            stopped_early = True
            break
    if trace[-1][0] != t:
        trace.append((t, state.average_sod()))

    labels = state.s
    final_objective = state.total_distance()
    if cfg.keep_best and best_obj < final_objective:
        labels, final_objective = best_labels, best_obj
    consensus = grid.with_labels(labels, num_labels=n_labels)
    return FusionReport(
        consensus=consensus,
        objective_trace=trace,
        iterations_run=t,
        moves_applied=moves,
        clamp_count=clamp_count,
        wall_time=time.perf_counter() - started,
        initial_objective=initial_objective,
        final_objective=final_objective,
        stopped_early=stopped_early,
        config=cfg.to_dict(),
        selections=selections,
    )


class SegmentationFusion(ClusterMixin, BaseEstimator):
    """Consensus clustering of several label vectors over the same samples.

    ``X`` has one row per pixel and one column per base segmentation; the
    fitted ``labels_`` give the consensus segment of every pixel.

    Parameters
    ----------
    beta : float, default=0.9
    t_max : int, default=1000
    distance : {"sdd", "dl", "qd"} or DistanceModel, default="sdd"
        ``"qd"`` without a fitted model normalizes SDD by its ceiling.
    n_labels : int, optional
    h_init : {"zeros", "full"}, default="zeros"
    early_stop : int, optional
    keep_best : bool, default=True
    random_state : int, default=0

    Attributes
    ----------
    labels_ : ndarray of shape (n_pixels,)
    report_ : FusionReport
    objective_trace_ : ndarray of shape (n_samples, 2)
    """

    def __init__(self, beta=0.9, t_max=1000, distance="sdd", n_labels=None,
                 h_init="zeros", early_stop=None, keep_best=True,
                 random_state=0):
        self.beta = beta
        self.t_max = t_max
        self.distance = distance
        self.n_labels = n_labels
        self.h_init = h_init
        self.early_stop = early_stop
        self.keep_best = keep_best
        self.random_state = random_state

    def _model(self, n):
        if isinstance(self.distance, DistanceModel):
            return self.distance
        if self.distance == "qd":
            return DistanceModel.qd_default(n)
        return DistanceModel(self.distance)

    def fit(self, X, y=None):
        X = check_label_matrix(X)
        members = [Partition(col) for col in X.T]
        cfg = FusionConfig(
            beta=self.beta, t_max=self.t_max, seed=self.random_state,
            distance=self._model(X.shape[0]), early_stop=self.early_stop,
            h_init=self.h_init, n_labels=self.n_labels,
            keep_best=self.keep_best)
        self.report_ = fuse(members, cfg)
        self.labels_ = np.array(self.report_.consensus.labels)
        self.objective_trace_ = np.array(self.report_.objective_trace)
        self.n_features_in_ = X.shape[1]
        return self

    def score(self, X, y=None):
        """Negative Average SOD of the fitted consensus against ``X``."""
        check_is_fitted(self)
        X = check_label_matrix(X)
        return -average_sod([Partition(c) for c in X.T],
                            Partition(self.labels_))
