"""Train/test evaluation protocol for the fusion variants.

The segment count and beta are chosen on the training split. The test split
is then segmented with per-band k-means and fused three ways: raw SDD, the
``1 - ARI`` distance, and SDD normalized by the range seen on training
pairs. Each consensus and each base segmentation is scored against the
test ground truth.
"""
from __future__ import annotations

from dataclasses import replace
from itertools import combinations

import numpy as np

from .exceptions import DegenerateMetricError, DegenerateRangeError
from .fusion import FusionConfig, fuse
from .metrics import DistanceModel, adjusted_rand_index, fit_qd, rand_index
from .model_selection import DEFAULT_BETA_GRID, estimate_beta, estimate_c, kmeans_ensemble

__all__ = ["evaluate", "run_protocol"]

def evaluate(consensus, ground_truth):
    """Rand and adjusted Rand index of a consensus against ground truth.

    ``ari`` is None when the index is undefined for the pair.
    """
    out = {"ri": rand_index(consensus, ground_truth), "ari": None}
    try:
        out["ari"] = adjusted_rand_index(consensus, ground_truth)
    except DegenerateMetricError as exc:
        out["diagnostic"] = f"{exc.code}: {exc}"
    return out


def run_protocol(train, test, c_grid=range(2, 11), beta_grid=DEFAULT_BETA_GRID,
                 t_max=1000, seed=0, mode="per-band", direction="maximize",
                 n_jobs=None):
    """Run model selection on ``train`` and score all variants on ``test``.

    Parameters
    ----------
    train, test : (MultibandImage, Partition)
        Image and ground truth of each split.

    Returns
    -------
    dict
        ``c_hat``, ``beta_hat``, the two GridResults, and RI/ARI rows keyed
        ``"average_base"``, ``"sdd"``, ``"dl"`` and ``"qd"``, plus
        ``notes`` (e.g. when training pairs give no QD range and the
        default range is used).
    """
    train_img, _ = train
    test_img, test_gt = test
    segmenter = kmeans_ensemble(mode=mode)

    c_result = estimate_c(train_img, segmenter, c_grid, direction, seed, n_jobs)
    c_hat = c_result.chosen
    train_ensemble = segmenter(train_img, c_hat, seed)
    template = FusionConfig(t_max=t_max, seed=seed, n_labels=c_hat)
    beta_result = estimate_beta(train_ensemble, template, beta_grid,
                                direction, n_jobs)
    beta_hat = beta_result.chosen

    test_ensemble = segmenter(test_img, c_hat, seed)
    base = [evaluate(p, test_gt) for p in test_ensemble]
    aris = [b["ari"] for b in base if b["ari"] is not None]
    rows = {"average_base": {
        "ri": float(np.mean([b["ri"] for b in base])),
        "ari": float(np.mean(aris)) if aris else None,
    }}
    notes = []
    try:
        qd = fit_qd(list(combinations(train_ensemble, 2)), basis="sdd")
        # the learned range is in raw pair counts of the training grid
        scale = test_img.n * (test_img.n - 1) / (train_img.n * (train_img.n - 1))
        qd = replace(qd, qd_min=qd.qd_min * scale, qd_max=qd.qd_max * scale)
    except DegenerateRangeError as exc:
        qd = DistanceModel.qd_default(test_img.n)
        notes.append(f"qd range fell back to [0, N(N-1)/2]: {exc}")
    models = {"sdd": DistanceModel("sdd"), "dl": DistanceModel("dl"),
              "qd": qd}
    for name, model in models.items():
        cfg = replace(template, beta=beta_hat, distance=model)
        rows[name] = evaluate(fuse(test_ensemble, cfg).consensus, test_gt)
    return {
        "c_hat": c_hat,
        "beta_hat": beta_hat,
        "c_grid": c_result,
        "beta_grid": beta_result,
        "rows": rows,
        "notes": notes,
    }
