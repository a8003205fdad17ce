"""Training-dynamics exports: cosine distance between windows and PCA projections."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

COS_EPS = 1e-12


def cosine_distance(c: torch.Tensor, c_tilde: torch.Tensor) -> torch.Tensor:
    """``1 - mean_l cos(c[l], c_tilde[l])`` over the time axis of (..., L, M) inputs."""
    c = torch.as_tensor(c)
    c_tilde = torch.as_tensor(c_tilde, dtype=c.dtype)
    dot = (c * c_tilde).sum(-1)
    norms = (torch.linalg.vector_norm(c, dim=-1) * torch.linalg.vector_norm(c_tilde, dim=-1)).clamp_min(COS_EPS)
    return (1.0 - (dot / norms).mean(-1)).clamp(0.0, 2.0)


@dataclass
class PCAProjection:
    projections: np.ndarray  # (N, k)
    components: np.ndarray  # (k, M), orthonormal rows
    explained_variance: np.ndarray  # (k,)
    explained_variance_ratio: np.ndarray  # (k,)
    mean: np.ndarray  # (M,)
    groups: list[str]

    def rows(self) -> list[dict[str, object]]:
        return [
            {"group": g, **{f"pc{j + 1}": float(v) for j, v in enumerate(p)}}
            for g, p in zip(self.groups, self.projections)
        ]


def pca_export(features: np.ndarray, groups: Sequence[str], k: int = 2) -> PCAProjection:
    """Project mean-centred features onto the top-``k`` right singular vectors.

    Each component is sign-fixed so that its largest-magnitude coordinate is positive.
    """
    X = np.asarray(features, dtype=np.float64)
    N = X.shape[0]
    if len(groups) != N:
        raise ValueError(f"{len(groups)} group tags for {N} rows")
    if not 1 <= k < N:
        raise ValueError(f"need 1 <= k < N, got k={k}, N={N}")
    if k > X.shape[1]:
        raise ValueError(f"k={k} exceeds feature dimension {X.shape[1]}")
    mean = X.mean(axis=0)
    Xc = X - mean
    _, s, vt = np.linalg.svd(Xc, full_matrices=False)
    comps = vt[:k].copy()
    for j in range(k):
        if comps[j, np.argmax(np.abs(comps[j]))] < 0:
            comps[j] = -comps[j]
    var = s**2 / (N - 1)
    total = var.sum()
    ratio = var[:k] / total if total > 0 else np.zeros(k)
    return PCAProjection(
        projections=Xc @ comps.T,
        components=comps,
        explained_variance=var[:k],
        explained_variance_ratio=ratio,
        mean=mean,
        groups=list(groups),
    )
