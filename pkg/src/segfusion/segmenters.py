"""Built-in base segmentation: k-means over pixel intensities.

Per-band mode clusters each band's 1-D intensities on its own and so yields
one partition per band; joint mode clusters the B-dimensional pixel vectors
once.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.cluster import kmeans_plusplus
from sklearn.utils.validation import check_array, check_is_fitted

from .core import Partition

__all__ = [
    "MultibandImage",
    "KMeansConfig",
    "KMeansSegmenter",
    "FewerClustersWarning",
    "RandomSplit",
    "RectangleSplit",
    "kmeans_segment",
    "split_train_test",
]

MODES = ("per-band", "joint")
INITS = ("k-means++", "random")


class FewerClustersWarning(UserWarning):
    """k-means found fewer distinct clusters than requested."""


@dataclass(frozen=True, eq=False)
class MultibandImage:
    """A ``width x height`` image with B real-valued bands.

    ``bands`` has shape ``(B, width * height)``, each band flattened
    row-major.
    """

    width: int
    height: int
    bands: np.ndarray
    band_names: tuple = ()

    def __post_init__(self):
        bands = np.array(self.bands, dtype=np.float64)
        if bands.ndim == 1:
            bands = bands[None, :]
        elif bands.ndim == 3:
            bands = bands.reshape(bands.shape[0], -1)
        if bands.shape[0] < 1:
            raise ValueError("an image needs at least one band")
        if bands.shape[1] != self.width * self.height:
            raise ValueError(
                f"bands hold {bands.shape[1]} samples, grid is "
                f"{self.width}x{self.height}")
        if not np.all(np.isfinite(bands)):
            raise ValueError("band intensities must be finite")
        bands.setflags(write=False)
        object.__setattr__(self, "bands", bands)
        object.__setattr__(self, "band_names", tuple(self.band_names))

    @property
    def n_bands(self):
        return self.bands.shape[0]

    @property
    def n(self):
        return self.width * self.height

    def pixels(self):
        """Pixel feature matrix of shape ``(N, B)``."""
        return self.bands.T

    def subset(self, index, width=None, height=None):
        index = np.asarray(index)
        if width is None:
            width, height = index.size, 1
        return MultibandImage(width, height, self.bands[:, index], self.band_names)


@dataclass(frozen=True)
class KMeansConfig:
    k: int = 6
    max_iters: int = 100
    tol: float = 1e-6
    seed: int = 0
    init: str = "k-means++"
    mode: str = "per-band"
    standardize: bool = False

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("k must be >= 2")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.tol < 0:
            raise ValueError("tol must be >= 0")
        if self.init not in INITS:
            raise ValueError(f"init must be one of {INITS}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")


def _sq_dists(X, centers):
    return ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)


def _initial_centers(X, k, init, seed):
    if init == "k-means++":
        centers, _ = kmeans_plusplus(X, k, random_state=seed)
        return centers
    rng = np.random.default_rng(seed)
    return X[rng.choice(X.shape[0], size=k, replace=False)].copy()


def _repair_empty(labels, d2, k):
    """Hand each empty cluster the point farthest from the largest cluster's centre."""
    counts = np.bincount(labels, minlength=k)
    for e in np.flatnonzero(counts == 0):
        big = int(np.argmax(counts))
        members = np.flatnonzero(labels == big)
        own = d2[members, big]
        far = members[int(np.argmax(own))]
        if own.max() <= 0.0:
            continue
        labels[far] = e
        counts[big] -= 1
        counts[e] += 1
        d2[far, big] = 0.0
    return labels


def _lloyd(X, k, max_iters, tol, init, seed):
    """Lloyd iterations; returns labels, centers and per-iteration inertia."""
    if X.shape[0] < k:
        raise ValueError(f"{X.shape[0]} samples cannot form {k} clusters")
    centers = _initial_centers(X, k, init, seed)
    history = []
    labels = None
    for _ in range(max_iters):
        d2 = _sq_dists(X, centers)
        new_labels = np.argmin(d2, axis=1)
        new_labels = _repair_empty(new_labels, d2, k)
        counts = np.bincount(new_labels, minlength=k)
        for j in np.flatnonzero(counts):
            centers[j] = X[new_labels == j].mean(axis=0)
        inertia = float(((X - centers[new_labels]) ** 2).sum())
        history.append(inertia)
        converged = labels is not None and np.array_equal(labels, new_labels)
        labels = new_labels
        if converged:
            break
        if len(history) > 1 and history[-2] - inertia <= tol * history[-2]:
            break
    return labels, centers, history


def _canonical(labels, centers, k):
    """Relabel non-empty clusters by ascending centroid norm."""
    present = np.flatnonzero(np.bincount(labels, minlength=k))
    order = present[np.argsort(np.linalg.norm(centers[present], axis=1),
                               kind="stable")]
    remap = np.full(k, -1, dtype=np.int64)
    remap[order] = np.arange(order.size)
    return remap[labels], centers[order]


class KMeansSegmenter(TransformerMixin, BaseEstimator):
    """Pixel k-means producing one or several label columns.

    ``X`` has shape ``(n_pixels, n_bands)``. ``transform`` returns an integer
    matrix with one column per band in ``"per-band"`` mode and a single
    column in ``"joint"`` mode, ready to feed :class:`SegmentationFusion`.

    Attributes
    ----------
    centers_ : list of ndarray
        Centroids of each column's clustering, in canonical order.
    inertia_history_ : list of list of float
        Within-cluster sum of squares after every Lloyd iteration.
    """

    def __init__(self, k=6, mode="per-band", max_iters=100, tol=1e-6,
                 init="k-means++", standardize=False, random_state=0):
        self.k = k
        self.mode = mode
        self.max_iters = max_iters
        self.tol = tol
        self.init = init
        self.standardize = standardize
        self.random_state = random_state

    def _views(self, X):
        if self.standardize:
            X = (X - self.mean_) / self.scale_
        if self.mode == "joint":
            return [X]
        return [X[:, [b]] for b in range(X.shape[1])]

    def fit(self, X, y=None):
        self._fit(X)
        return self

    def fit_transform(self, X, y=None, **fit_params):
        return self._fit(X)

    def _fit(self, X):
        cfg = KMeansConfig(self.k, self.max_iters, self.tol, self.random_state,
                           self.init, self.mode, self.standardize)
        X = check_array(X, dtype=np.float64, ensure_min_samples=2)
        self.n_features_in_ = X.shape[1]
        self.mean_ = X.mean(axis=0)
        scale = X.std(axis=0)
        self.scale_ = np.where(scale > 0, scale, 1.0)
        self.centers_, self.inertia_history_ = [], []
        columns = []
        for b, view in enumerate(self._views(X)):
            labels, centers, history = _lloyd(
                view, cfg.k, cfg.max_iters, cfg.tol, cfg.init,
                cfg.seed + b)
            labels, centers = _canonical(labels, centers, cfg.k)
            if centers.shape[0] < cfg.k:
                warnings.warn(
                    f"column {b}: only {centers.shape[0]} of {cfg.k} clusters "
                    "are non-empty", FewerClustersWarning, stacklevel=3)
            self.centers_.append(centers)
            self.inertia_history_.append(history)
            columns.append(labels)
        return np.stack(columns, axis=1)

    def transform(self, X):
        check_is_fitted(self, "centers_")
        X = check_array(X, dtype=np.float64)
        cols = [np.argmin(_sq_dists(view, centers), axis=1)
                for view, centers in zip(self._views(X), self.centers_)]
        return np.stack(cols, axis=1)


def kmeans_segment(img, cfg=None):
    """Segment an image with k-means.

    Returns a list of Partition on the image grid: B of them in per-band
    mode, one in joint mode.
    """
    cfg = KMeansConfig() if cfg is None else cfg
    seg = KMeansSegmenter(cfg.k, cfg.mode, cfg.max_iters, cfg.tol, cfg.init,
                          cfg.standardize, cfg.seed)
    labels = seg.fit_transform(img.pixels())
    return [Partition(col, img.width, img.height) for col in labels.T]


@dataclass(frozen=True)
class RectangleSplit:
    """Train/test windows as ``(x0, x1, y0, y1)``, 0-based and half-open.

    With ``test=None`` the test split is every pixel outside ``train``, in
    row-major order.
    """

    train: tuple
    test: tuple | None = None


@dataclass(frozen=True)
class RandomSplit:
    """Seeded random pixel subset of ``round(fraction * N)`` training pixels."""

    fraction: float
    seed: int = 0


def _window(width, height, rect):
    x0, x1, y0, y1 = (int(v) for v in rect)
    if not (0 <= x0 < x1 <= width and 0 <= y0 < y1 <= height):
        raise ValueError(f"window {rect} outside {width}x{height} grid")
    ys, xs = np.mgrid[y0:y1, x0:x1]
    return (ys * width + xs).reshape(-1), x1 - x0, y1 - y0


def split_train_test(img, ground_truth, spec):
    """Split an image and its ground truth into train and test parts.

    Returns
    -------
    (train_img, train_gt), (test_img, test_gt)
    """
    if ground_truth.n != img.n:
        raise ValueError("ground truth and image sizes differ")
    n = img.n
    if isinstance(spec, RectangleSplit):
        train_idx, tw, th = _window(img.width, img.height, spec.train)
        if spec.test is None:
            mask = np.ones(n, dtype=bool)
            mask[train_idx] = False
            test_idx, sw, sh = np.flatnonzero(mask), None, None
        else:
            test_idx, sw, sh = _window(img.width, img.height, spec.test)
    elif isinstance(spec, RandomSplit):
        if not 0.0 < spec.fraction < 1.0:
            raise ValueError("fraction must lie in (0, 1)")
        rng = np.random.default_rng(spec.seed)
        n_train = int(round(spec.fraction * n))
        train_idx = np.sort(rng.choice(n, size=n_train, replace=False))
        mask = np.ones(n, dtype=bool)
        mask[train_idx] = False
        test_idx = np.flatnonzero(mask)
        tw = th = sw = sh = None
    else:
        raise TypeError("spec must be a RectangleSplit or RandomSplit")
    if train_idx.size < 2 or test_idx.size < 2:
        raise ValueError("split leaves an empty (or single-pixel) part")

    def part(index, w, h):
        sub = img.subset(index, w, h)
        gt = Partition(ground_truth.labels[index], sub.width, sub.height,
                       ground_truth.num_labels)
        return sub, gt

    return part(train_idx, tw, th), part(test_idx, sw, sh)
