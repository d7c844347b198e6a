"""InfoNCE-based training objectives.

Every term compares a batch of query embeddings against a batch of reference
embeddings of the same size; row ``i`` of both batches is the positive pair
and the remaining rows act as in-batch negatives.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ContractError, DegenerateBatchError, ParameterError


@dataclass
class EmbeddingBatch:
    vectors: torch.Tensor
    ids: Sequence[str]
    normalized: bool = True

    def __post_init__(self):
        if not isinstance(self.vectors, torch.Tensor):
            self.vectors = torch.as_tensor(np.asarray(self.vectors))
        if self.vectors.ndim != 2:
            raise ContractError(f"embeddings must be B x D, got {tuple(self.vectors.shape)}")
        if len(self.ids) != self.vectors.shape[0]:
            raise ContractError("ids and vectors disagree on batch size")
        if len(set(self.ids)) != len(self.ids):
            raise ContractError("ids must be unique within a batch")
        if self.normalized:
            _check_unit_norm(self.vectors)

    def __len__(self) -> int:
        return self.vectors.shape[0]

    def numpy(self) -> np.ndarray:
        return self.vectors.detach().cpu().numpy()


@dataclass
class LossWeights:
    omega1: float = 0.25
    omega2: float = 0.25
    omega3: float = 0.25
    gamma: float = 0.5
    tau: float | torch.Tensor = 0.07
    label_smoothing: float = 0.1

    def __post_init__(self):
        for name in ("omega1", "omega2", "omega3", "gamma"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be nonnegative")
        tau = float(self.tau.detach()) if isinstance(self.tau, torch.Tensor) else float(self.tau)
        if tau <= 0:
            raise ParameterError(f"temperature must be positive, got {tau}")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ParameterError(f"label smoothing must lie in [0, 1), got {self.label_smoothing}")


def _check_unit_norm(v: torch.Tensor) -> None:
    tol = max(1e-6, 10 * torch.finfo(v.dtype).eps)
    norms = torch.linalg.vector_norm(v.detach(), dim=1)
    if not torch.all(torch.abs(norms - 1.0) <= tol):
        raise ContractError("embeddings must be L2-normalized")


def _vectors(x) -> torch.Tensor:
    if isinstance(x, EmbeddingBatch):
        v = x.vectors
    elif isinstance(x, torch.Tensor):
        v = x
    else:
        v = torch.as_tensor(np.asarray(x))
    _check_unit_norm(v)
    return v


def infonce(queries, references, weights: LossWeights) -> torch.Tensor:
    """Mean label-smoothed cross-entropy of ``queries @ references.T / tau``."""
    q, r = _vectors(queries), _vectors(references)
    if q.shape != r.shape:
        raise ContractError(f"query/reference shape mismatch {tuple(q.shape)} vs {tuple(r.shape)}")
    b = q.shape[0]
    if b < 2:
        raise DegenerateBatchError("batch size must be >= 2 to provide in-batch negatives")
    logits = q @ r.T / weights.tau
    eps = weights.label_smoothing
    targets = torch.full_like(logits, eps / b)
    targets.diagonal().add_(1.0 - eps)
    return -(targets * F.log_softmax(logits, dim=1)).sum(dim=1).mean()


def disc_loss(g_star, G, s_star, S, weights: LossWeights) -> torch.Tensor:
    """Intra-view discriminativeness: augmented ground vs ground, augmented satellite vs satellite."""
    return infonce(g_star, G, weights) + infonce(s_star, S, weights)


def cross_loss(g, g_star, S, S_star, weights: LossWeights) -> torch.Tensor:
    loss = infonce(g, S, weights)
    # zero-weight terms are skipped so the degenerate configuration is the plain baseline
    for w, q, r in ((weights.omega1, g_star, S), (weights.omega2, g, S_star),
                    (weights.omega3, g_star, S_star)):
        if w:
            loss = loss + w * infonce(q, r, weights)
    return loss


def total_loss(g, g_star, s, s_star, weights: LossWeights) -> torch.Tensor:
    loss = cross_loss(g, g_star, s, s_star, weights)
    if weights.gamma:
        loss = loss + weights.gamma * disc_loss(g_star, g, s_star, s, weights)
    return loss


def needs_augmented_views(weights: LossWeights) -> bool:
    return bool(weights.omega1 or weights.omega2 or weights.omega3 or weights.gamma)
