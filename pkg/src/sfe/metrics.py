"""Distribution distances between image-embedding sets.

FID is the Gaussian Frechet distance between the two embedding clouds; KID
is the unbiased squared MMD with the cubic polynomial kernel
k(x, y) = (x.y / dim + 1)^3, averaged over random subsets. The desk-scale
embedder is a deterministic downsample-and-flatten; externally computed
embeddings are accepted as raw float32 files with a JSON shape sidecar.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg


@dataclass
class FidResult:
    value: float
    jitter_applied: bool

    def __float__(self) -> float:
        return self.value


def _check_embeddings(a: np.ndarray, b: np.ndarray, min_count: int):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("embedding sets must be 2-D (count x dim)")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"embedding dims differ: {a.shape[1]} vs {b.shape[1]}")
    if min(a.shape[0], b.shape[0]) < min_count:
        raise ValueError(f"need at least {min_count} embeddings per set")
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise ValueError("embeddings must be finite")
    return a, b


def fid(a: np.ndarray, b: np.ndarray, eps: float = 1e-6) -> FidResult:
    """Frechet distance |mu_a - mu_b|^2 + tr(Sa + Sb - 2 (Sa Sb)^1/2).

    A singular covariance product is stabilized by adding ``eps * I`` to both
    covariances; ``jitter_applied`` records that this happened.
    """
    a, b = _check_embeddings(a, b, min_count=2)
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    cov_a = np.cov(a, rowvar=False)
    cov_b = np.cov(b, rowvar=False)
    cov_a = np.atleast_2d(cov_a)
    cov_b = np.atleast_2d(cov_b)

    jitter = False
    covmean, _ = scipy.linalg.sqrtm(cov_a @ cov_b, disp=False)
    if not np.isfinite(covmean).all():
        jitter = True
        offset = eps * np.eye(cov_a.shape[0])
        covmean, _ = scipy.linalg.sqrtm((cov_a + offset) @ (cov_b + offset), disp=False)
    if np.iscomplexobj(covmean):
        covmean = covmean.real
    value = float(
        np.sum((mu_a - mu_b) ** 2) + np.trace(cov_a + cov_b - 2.0 * covmean)
    )
    return FidResult(value=value, jitter_applied=jitter)


def _poly_kernel(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    dim = x.shape[1]
    return (x @ y.T / dim + 1.0) ** 3


def mmd2_unbiased(x: np.ndarray, y: np.ndarray) -> float:
    """Unbiased squared MMD between two equal-size samples.

    U-statistic form: the i = j terms are excluded from the cross sum too,
    so identical paired samples cancel exactly to zero.
    """
    m = x.shape[0]
    k_xx = _poly_kernel(x, x)
    k_yy = _poly_kernel(y, y)
    k_xy = _poly_kernel(x, y)
    sum_xx = (k_xx.sum() - np.trace(k_xx)) / (m * (m - 1))
    sum_yy = (k_yy.sum() - np.trace(k_yy)) / (m * (m - 1))
    sum_xy = 2.0 * (k_xy.sum() - np.trace(k_xy)) / (m * (m - 1))
    return float(sum_xx + sum_yy - sum_xy)


def kid(
    a: np.ndarray,
    b: np.ndarray,
    subset_size: int = 100,
    subsets: int = 10,
    seed: int = 0,
) -> float:
    """Average unbiased MMD^2 over random equal-size subsets of both sets.

    Equal-size sets use paired subset indices, which is unbiased for
    independent samples and makes the estimate exactly zero when the two
    sets coincide.
    """
    a, b = _check_embeddings(a, b, min_count=2)
    if subset_size < 2:
        raise ValueError("subset_size must be >= 2")
    if min(a.shape[0], b.shape[0]) < subset_size:
        raise ValueError(
            f"subset_size {subset_size} exceeds smallest set ({min(a.shape[0], b.shape[0])})"
        )
    rng = np.random.default_rng(seed)
    values = []
    for _ in range(subsets):
        ia = rng.choice(a.shape[0], size=subset_size, replace=False)
        ib = ia if a.shape[0] == b.shape[0] else rng.choice(b.shape[0], size=subset_size, replace=False)
        values.append(mmd2_unbiased(a[ia], b[ib]))
    return float(np.mean(values))


def downsample_embedder(images: np.ndarray, size: int = 8) -> np.ndarray:
    """Deterministic embedding: area-average to size x size and flatten.

    ``images``: [N, H, W, 3] floats in [0, 1]; H and W must be multiples of
    ``size``. Returns [N, size*size*3] float64.
    """
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 4 or images.shape[-1] != 3:
        raise ValueError("expected [N, H, W, 3] images")
    n, h, w, _ = images.shape
    if h % size or w % size:
        raise ValueError(f"image side must be a multiple of {size}")
    pooled = images.reshape(n, size, h // size, size, w // size, 3).mean(axis=(2, 4))
    return pooled.reshape(n, -1)
