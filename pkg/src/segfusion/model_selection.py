"""Grid selection of the segment count and the forgetting factor.

Both searches score candidates by summed pairwise ARI. The segment count
is scored by agreement among the base segmentations produced at that
count; beta is scored by agreement between each base segmentation and the
fused output. Scores are maximized by default. ``direction="minimize"``
reproduces the literal argmin form.
"""
from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import dataclass, field, replace
from itertools import combinations

from joblib import Parallel, delayed

from .core import check_comparable, check_ensemble
from .exceptions import DegenerateMetricError
from .fusion import FusionConfig, fuse
from .metrics import adjusted_rand_index
from .segmenters import KMeansConfig, kmeans_segment

__all__ = [
    "GridResult",
    "segmentation_index",
    "beta_index",
    "estimate_c",
    "estimate_beta",
]

DIRECTIONS = ("maximize", "minimize")

_DIRECTION_NOTES = {
    "maximize": "maximize selects the strongest ARI agreement; the literal "
                "argmin form is available as direction='minimize'",
    "minimize": "argmin form selects the least ARI agreement; maximize "
                "selects the most",
}


@dataclass
class GridResult:
    """Scores of every grid candidate and the selected one.

    ``scores[i]`` is None where ``valid[i]`` is False.
    """

    grid: list
    scores: list
    valid: list
    chosen: object
    direction: str
    skipped_pairs: int = 0
    notes: list = field(default_factory=list)

    def to_dict(self):
        return {
            "grid": list(self.grid),
            "scores": list(self.scores),
            "valid": list(self.valid),
            "chosen": self.chosen,
            "direction": self.direction,
            "skipped_pairs": self.skipped_pairs,
            "notes": list(self.notes),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["candidate", "score", "valid"])
        for cand, score, ok in zip(self.grid, self.scores, self.valid):
            writer.writerow([cand, "" if score is None else repr(score), int(ok)])
        return buf.getvalue()


def _ari_sum(pairs):
    total, skipped = 0.0, 0
    for p, q in pairs:
        try:
            total += adjusted_rand_index(p, q)
        except DegenerateMetricError:
            skipped += 1
    return total, skipped


def segmentation_index(ensemble_at_c, return_skipped=False):
    """Sum of ARI over all unordered pairs of the ensemble.

    Pairs whose ARI is undefined are left out; pass
    ``return_skipped=True`` to also get their count.
    """
    members = check_ensemble(ensemble_at_c, min_size=2)
    total, skipped = _ari_sum(combinations(members, 2))
    return (total, skipped) if return_skipped else total


def beta_index(ensemble, consensus, return_skipped=False):
    """Sum of ARI between every ensemble member and the consensus."""
    members = check_ensemble(ensemble)
    check_comparable(members[0], consensus)
    total, skipped = _ari_sum((m, consensus) for m in members)
    return (total, skipped) if return_skipped else total


DEFAULT_BETA_GRID = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.99)


def _select(grid, scores, valid, direction, failures=()):
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}")
    candidates = [(g, s) for g, s, ok in zip(grid, scores, valid) if ok]
    if not candidates:
        reason = f" (first: {failures[0]})" if failures else ""
        raise RuntimeError(f"every grid candidate failed{reason}")
    sign = 1.0 if direction == "maximize" else -1.0
    best = max(sign * s for _, s in candidates)
    # ties go to the smallest candidate
    return min(g for g, s in candidates if sign * s == best)


def _finish(grid, scores, valid, direction, skipped, failures):
    failures = [f for f in failures if f]
    notes = [f"candidate failed: {f}" for f in failures]
    if direction in _DIRECTION_NOTES:
        notes.append(_DIRECTION_NOTES[direction])
    return GridResult(list(grid), scores, valid,
                      _select(grid, scores, valid, direction, failures),
                      direction, skipped, notes)


def kmeans_ensemble(mode="per-band", **params):
    """Segmenter callable ``(image, c, seed) -> list of Partition`` using k-means."""
    def segment(image, c, seed):
        return kmeans_segment(image, KMeansConfig(k=c, seed=seed, mode=mode, **params))
    return segment


def estimate_c(image, segmenter=None, c_grid=range(2, 11), direction="maximize",
               seed=0, n_jobs=None):
    """Choose the segment count whose base segmentations agree best.

    Parameters
    ----------
    image : MultibandImage
    segmenter : callable, optional
        ``segmenter(image, c, seed)`` returning at least two partitions.
        Defaults to per-band k-means.
    c_grid : iterable of int
    direction : {"maximize", "minimize"}
    seed : int
        Candidate ``i`` runs with seed ``seed ^ i``.
    n_jobs : int, optional
        Candidates evaluated in parallel through joblib.

    Returns
    -------
    GridResult
    """
    grid = [int(c) for c in c_grid]
    if not grid or min(grid) < 2:
        raise ValueError("c_grid must be non-empty with values >= 2")
    segmenter = kmeans_ensemble() if segmenter is None else segmenter

    def run(i, c):
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                ensemble = segmenter(image, c, seed ^ i)
            return segmentation_index(ensemble, return_skipped=True), len(ensemble), None
        except Exception as exc:
            return None, 0, f"c={c}: {type(exc).__name__}: {exc}"

    results = Parallel(n_jobs=n_jobs)(
        delayed(run)(i, c) for i, c in enumerate(grid))
    scores = [r[0] if r else None for r, _, _ in results]
    valid = [r is not None for r, _, _ in results]
    skipped = sum(r[1] for r, _, _ in results if r)
    result = _finish(grid, scores, valid, direction, skipped,
                     [f for _, _, f in results])
    sizes = {k for (r, k, _) in results if r}
    if len(sizes) > 1:
        result.notes.append(
            f"ensemble size varies across candidates {sorted(sizes)}; "
            "SI sums are not comparable across sizes")
    return result


def estimate_beta(ensemble, cfg_template=None, beta_grid=None,
                  direction="maximize", n_jobs=None):
    """Choose beta by agreement between the ensemble and each fused output.

    Candidate ``i`` is fused with ``cfg_template`` but ``beta=beta_grid[i]``
    and ``seed=cfg_template.seed ^ i``.
    """
    members = check_ensemble(ensemble)
    cfg_template = FusionConfig() if cfg_template is None else cfg_template
    if beta_grid is None:
        beta_grid = DEFAULT_BETA_GRID
    grid = [float(b) for b in beta_grid]
    if not grid:
        raise ValueError("beta_grid is empty")
    if any(not 0.0 <= b <= 1.0 or math.isnan(b) for b in grid):
        raise ValueError("beta values must lie in [0, 1]")

    def run(i, beta):
        try:
            cfg = replace(cfg_template, beta=beta, seed=cfg_template.seed ^ i)
            report = fuse(members, cfg)
            return beta_index(members, report.consensus, return_skipped=True), None
        except Exception as exc:
            return None, f"beta={beta}: {type(exc).__name__}: {exc}"

    results = Parallel(n_jobs=n_jobs)(
        delayed(run)(i, b) for i, b in enumerate(grid))
    scores = [r[0] if r else None for r, _ in results]
    valid = [r is not None for r, _ in results]
    skipped = sum(r[1] for r, _ in results if r)
    return _finish(grid, scores, valid, direction, skipped,
                   [f for _, f in results])
