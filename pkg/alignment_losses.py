"""Fine-grained cross-modal consistency (FCC), the token task loss and the weighted total.

FCC ties two views of a prompt pair together: how similar the global
(sentence) and local (entity) prompts are semantically, and how much their
attention maps overlap spatially. Both matrices are N x P (global x local).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

import tensor_core as tc
from errors import DimensionError, DomainError, NumericError, ValidationError
from tensor_core import Tensor

COSINE_EPS = 1e-12
IOU_EPS = 1e-8


@dataclass(frozen=True)
class SimilarityMatrix:
    values: Tensor


@dataclass(frozen=True)
class OverlapMatrix:
    values: Tensor


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 2.0
    beta: float = 0.5

    def __post_init__(self):
        for name in ("alpha", "beta"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ValidationError(f"{name} must be finite and non-negative, got {value}")


def cosine_similarity_matrix(F_g, F_l) -> Tensor:
    """S_nm = <g_n, l_m> / (||g_n|| ||l_m||), zero-norm rows guarded."""
    F_g, F_l = tc.as_tensor(F_g), tc.as_tensor(F_l)
    if F_g.shape[-1] != F_l.shape[-1] or F_g.shape[:-2] != F_l.shape[:-2]:
        raise DimensionError(f"cosine operands disagree: {F_g.shape} vs {F_l.shape}")
    dots = tc.matmul(F_g, tc.transpose(F_l))
    norms = tc.matmul(tc.safe_norm(F_g), tc.transpose(tc.safe_norm(F_l)))
    return tc.div(dots, tc.maximum(norms, COSINE_EPS))


def sigmoid_normalize(S) -> SimilarityMatrix:
    return SimilarityMatrix(tc.sigmoid(S))


def iou_matrix(M_g, M_l) -> OverlapMatrix:
    """Soft IoU of every global map [N, L] against every local map [P, L] via elementwise min / max."""
    M_g, M_l = tc.as_tensor(M_g), tc.as_tensor(M_l)
    if M_g.ndim < 2 or M_g.shape[-1] != M_l.shape[-1] or M_g.shape[:-2] != M_l.shape[:-2]:
        raise DimensionError(f"attention maps disagree: {M_g.shape} vs {M_l.shape}")
    for name, m in (("global", M_g), ("local", M_l)):
        if np.any(m.data < 0):
            idx = tuple(int(i) for i in np.argwhere(m.data < 0)[0])
            raise DomainError(f"{name} attention map has a negative entry at {idx}: {float(m.data[idx])}")
    lead = M_g.shape[:-2]
    n, p, length = M_g.shape[-2], M_l.shape[-2], M_g.shape[-1]
    grid = lead + (n, p, length)
    a = tc.broadcast_to(tc.reshape(M_g, lead + (n, 1, length)), grid)
    b = tc.broadcast_to(tc.reshape(M_l, lead + (1, p, length)), grid)
    inter = tc.reduce("sum", tc.minimum(a, b), axis=-1)
    union = tc.maximum(tc.reduce("sum", tc.maximum(a, b), axis=-1), IOU_EPS)
    return OverlapMatrix(tc.div(inter, union))


def fcc_loss(S: SimilarityMatrix, O: OverlapMatrix) -> Tensor:
    """Mean of (1 - S_nm * O_nm) over all prompt pairs (and batch items)."""
    s = S.values if isinstance(S, SimilarityMatrix) else tc.as_tensor(S)
    o = O.values if isinstance(O, OverlapMatrix) else tc.as_tensor(O)
    if s.shape != o.shape:
        raise DimensionError(f"similarity {s.shape} and overlap {o.shape} shapes differ")
    return tc.reduce("mean", tc.sub(1.0, tc.mul(s, o)))


def task_loss_tokens(logits, tokens) -> Tensor:
    """Mean token-level cross-entropy."""
    return tc.cross_entropy_rows(logits, tokens)


def total_loss(task, rank, fcc, weights: LossWeights | None = None) -> Tensor:
    """task + alpha * rank + beta * fcc."""
    w = weights or LossWeights()
    task, rank, fcc = tc.as_tensor(task), tc.as_tensor(rank), tc.as_tensor(fcc)
    for name, t in (("task", task), ("rank", rank), ("fcc", fcc)):
        if t.size != 1:
            raise DimensionError(f"{name} loss must be a scalar, got shape {t.shape}")
        if not np.isfinite(t.item()):
            raise NumericError(f"{name} loss is not finite")
    return tc.add(tc.add(task, tc.mul(w.alpha, rank)), tc.mul(w.beta, fcc))
