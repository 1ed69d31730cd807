"""Differentiable semantic volume masking.

Given per-ray occupancies and semantic probabilities at the sorted manifold
intersections, this layer computes alpha-compositing weights, classifies the
point on each manifold by the transmittance-weighted class accumulation from
that manifold onward, and partitions points into coarse semantic collections
for the appearance network.

Occupancy is used directly as the compositing alpha: the weight of point j
when compositing from start index k is

    w_j = sigma_j * prod_{k <= i < j} (1 - sigma_i)

and the label of the k-th manifold point is the argmax over classes of
sum_j w_j * probs_j (ties broken toward the lowest class index).

Two implementations live here: plain NumPy functions operating on one ray
(the reference contract, accumulating strictly in intersection order so they
are bit-comparable against an explicit loop), and batched torch versions used
inside the generator. Gradients flow through weights and probabilities; the
discrete labels themselves are hard routing decisions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

# Sentinel label for a ray with no valid intersections.
EMPTY_RAY = -1


def _check_sigmas(sigmas: np.ndarray) -> np.ndarray:
    sigmas = np.asarray(sigmas, dtype=np.float64)
    if sigmas.ndim != 1:
        raise ValueError("sigmas must be a 1-D array")
    if sigmas.size and (sigmas.min() < 0.0 or sigmas.max() > 1.0):
        raise ValueError("occupancies must lie in [0, 1]")
    return sigmas


def composite_weights(sigmas, start: int = 0) -> tuple[np.ndarray, float]:
    """Compositing weights and residual transmittance from ``start`` onward.

    Returns (weights, residual) where weights[m] belongs to intersection
    ``start + m`` and residual is the transmittance surviving past the last
    point; weights.sum() + residual == 1 up to rounding.
    """
    sigmas = _check_sigmas(sigmas)
    count = sigmas.size
    if not 0 <= start < max(count, 1):
        raise ValueError(f"start index {start} outside [0, {count})")
    weights = np.empty(count - start, dtype=np.float64)
    transmittance = 1.0
    for j in range(start, count):
        weights[j - start] = transmittance * sigmas[j]
        transmittance *= 1.0 - sigmas[j]
    return weights, transmittance


def semantic_of_manifold(sigmas, sem_probs, start: int = 0) -> int:
    """Class label of the ``start``-th intersection along a ray.

    ``sem_probs`` rows are probability vectors aligned with ``sigmas``.
    Returns EMPTY_RAY for an empty intersection list.
    """
    sigmas = _check_sigmas(sigmas)
    if sigmas.size == 0:
        return EMPTY_RAY
    sem_probs = np.asarray(sem_probs, dtype=np.float64)
    if sem_probs.shape[0] != sigmas.size:
        raise ValueError("sem_probs rows must align with sigmas")
    acc = np.zeros(sem_probs.shape[1], dtype=np.float64)
    transmittance = 1.0
    for j in range(start, sigmas.size):
        weight = transmittance * sigmas[j]
        acc += weight * sem_probs[j]
        transmittance *= 1.0 - sigmas[j]
    return int(np.argmax(acc))


def label_intersections(sigmas, sem_probs) -> np.ndarray:
    """Per-intersection labels: entry k is semantic_of_manifold(..., start=k)."""
    sigmas = _check_sigmas(sigmas)
    return np.array(
        [semantic_of_manifold(sigmas, sem_probs, start=k) for k in range(sigmas.size)],
        dtype=np.int64,
    )


@dataclass
class SemanticGrouping:
    """Partition of a ray's valid intersections into semantic collections.

    ``group_labels[j]`` is the coarse group of intersection j; ``collections[i]``
    holds the indices of the intersections routed to group i. Collections are
    disjoint and exhaustive over the valid intersections.
    """

    group_labels: np.ndarray
    collections: list[np.ndarray]


def group_points(sigmas, sem_probs, clubbing) -> SemanticGrouping:
    """Label each intersection via the masking equation and club into groups."""
    clubbing = np.asarray(clubbing, dtype=np.int64)
    fine = label_intersections(sigmas, sem_probs)
    if fine.size and fine.max() >= clubbing.size:
        raise ValueError("semantic label outside clubbing map")
    groups = clubbing[fine] if fine.size else fine
    num_groups = int(clubbing.max()) + 1 if clubbing.size else 0
    collections = [np.nonzero(groups == i)[0] for i in range(num_groups)]
    return SemanticGrouping(group_labels=groups, collections=collections)


# --- batched torch path -----------------------------------------------------


def composite_weights_torch(
    sigmas: torch.Tensor, valid: torch.Tensor | None = None
) -> tuple[torch.Tensor, torch.Tensor]:
    """Batched compositing weights along the last dimension.

    ``sigmas``: [..., J] occupancies; invalid entries are treated as empty
    space (sigma 0). Returns (weights [..., J], residual [...]). Differentiable.
    """
    if valid is not None:
        sigmas = sigmas * valid.to(sigmas.dtype)
    one_minus = 1.0 - sigmas
    cum = torch.cumprod(one_minus, dim=-1)
    transmittance = torch.cat(
        [torch.ones_like(cum[..., :1]), cum[..., :-1]], dim=-1
    )
    weights = sigmas * transmittance
    residual = cum[..., -1]
    return weights, residual


def manifold_labels_torch(
    sigmas: torch.Tensor, sem_probs: torch.Tensor, valid: torch.Tensor | None = None
) -> torch.Tensor:
    """Labels of every intersection for a batch of rays.

    ``sigmas``: [R, J], ``sem_probs``: [R, J, C]. Entry [r, k] is the argmax of
    the class accumulation starting at k; accumulation runs sequentially over
    j, matching the reference loop's floating-point order. Invalid entries
    contribute nothing. Hard routing only, so no gradients are tracked.
    """
    with torch.no_grad():
        rays, J = sigmas.shape
        num_classes = sem_probs.shape[-1]
        if valid is not None:
            sigmas = sigmas * valid.to(sigmas.dtype)
        labels = torch.empty(rays, J, dtype=torch.int64, device=sigmas.device)
        class_idx = torch.arange(num_classes, device=sigmas.device)
        for k in range(J):
            acc = torch.zeros(rays, num_classes, dtype=sigmas.dtype, device=sigmas.device)
            transmittance = torch.ones(rays, dtype=sigmas.dtype, device=sigmas.device)
            for j in range(k, J):
                weight = transmittance * sigmas[:, j]
                acc = acc + weight.unsqueeze(-1) * sem_probs[:, j]
                transmittance = transmittance * (1.0 - sigmas[:, j])
            # argmax with explicit lowest-index tie-breaking
            top = acc.max(dim=1, keepdim=True).values
            candidates = torch.where(acc == top, class_idx, num_classes)
            labels[:, k] = candidates.min(dim=1).values
        return labels


def club_labels(labels: torch.Tensor, clubbing: torch.Tensor) -> torch.Tensor:
    """Map fine class labels onto coarse groups; negatives pass through."""
    out = labels.clone()
    mask = labels >= 0
    out[mask] = clubbing.to(labels.device)[labels[mask]]
    return out
