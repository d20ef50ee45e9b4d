"""Learnable retrieval: pairwise distances, ranking loss, GRP selection and an exact index.

Training supervises the HNN embeddings with a cross-entropy over each row
of the in-batch distance matrix, targeting the batch neighbour with the
smallest Hamming distance. Inference scans a frozen index of database
embeddings and returns the exact k nearest records.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from enum import Enum
from typing import Sequence

import numpy as np

import hyperbolic
import tensor_core as tc
import utils
from errors import DimensionError, TargetIndexError, ValidationError
from hyperbolic import BallConfig, HnnParams
from tensor_core import Tensor

logger = logging.getLogger(__name__)


class Backend(str, Enum):
    HYPERBOLIC = "hyperbolic"
    EUCLIDEAN = "euclidean"
    COSINE = "cosine"

    @classmethod
    def parse(cls, value) -> "Backend":
        try:
            return cls(value.value if isinstance(value, Backend) else str(value).lower())
        except ValueError as e:
            choices = ", ".join(b.value for b in cls)
            raise ValidationError(f"unknown backend '{value}' (choose from {choices})") from e


@dataclass(frozen=True)
class DistanceMatrix:
    values: Tensor
    backend: Backend
    diagonal_masked: bool = False

    @property
    def size(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class RankTargets:
    indices: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64).reshape(-1)
        b = idx.size
        if np.any((idx < 0) | (idx >= b)):
            raise TargetIndexError(f"rank targets must lie in [0, {b}), got {idx.tolist()}")
        if np.any(idx == np.arange(b)):
            row = int(np.argmax(idx == np.arange(b)))
            raise ValidationError(f"rank target of row {row} points at itself")
        idx.flags.writeable = False
        object.__setattr__(self, "indices", idx)


def embed_for_backend(logits, params: HnnParams, backend) -> Tensor:
    """Ball points for the hyperbolic backend, the HNN's affine features otherwise."""
    if Backend.parse(backend) is Backend.HYPERBOLIC:
        return hyperbolic.hnn_embed(logits, params)
    return hyperbolic.hnn_affine(logits, params)


def cross_distances(a, b, backend, config: BallConfig | None = None) -> Tensor:
    """Distances between every row of ``a`` [A, d] and every row of ``b`` [N, d]."""
    backend = Backend.parse(backend)
    a, b = tc.as_tensor(a), tc.as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise DimensionError(f"cross_distances needs [A, d] and [N, d] operands, got {a.shape} and {b.shape}")
    grid = (a.shape[0], b.shape[0], a.shape[1])
    if backend is Backend.COSINE:
        ua = tc.div(a, tc.broadcast_to(tc.safe_norm(a), a.shape))
        ub = tc.div(b, tc.broadcast_to(tc.safe_norm(b), b.shape))
        return tc.sub(1.0, tc.matmul(ua, tc.transpose(ub)))
    left = tc.broadcast_to(tc.reshape(a, (a.shape[0], 1, a.shape[1])), grid)
    right = tc.broadcast_to(tc.reshape(b, (1, b.shape[0], b.shape[1])), grid)
    if backend is Backend.EUCLIDEAN:
        return tc.safe_norm(tc.sub(left, right), keepdims=False)
    config = config or BallConfig()
    return hyperbolic.geodesic_distance(left, right, config.curvature, config)


def pairwise_distances(points, backend=Backend.HYPERBOLIC, config: BallConfig | None = None) -> DistanceMatrix:
    """D_hat_ij = d(h_i, h_j) for every pair in the batch."""
    points = tc.as_tensor(points)
    if points.ndim != 2 or points.shape[0] < 2:
        raise ValidationError(f"pairwise_distances needs a batch of at least 2 rows, got shape {points.shape}")
    backend = Backend.parse(backend)
    return DistanceMatrix(values=cross_distances(points, points, backend, config), backend=backend)


def rank_targets(D) -> RankTargets:
    """pi_i = argmin_{j != i} D_ij, ties going to the smallest j."""
    D = np.asarray(D)
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        raise ValidationError(f"ground-truth distances must be a square matrix, got shape {D.shape}")
    if D.shape[0] < 2:
        raise ValidationError(f"rank_targets needs a batch of at least 2, got {D.shape[0]}")
    if np.any(np.diag(D) != 0) or not np.array_equal(D, D.T):
        raise ValidationError("ground-truth distances must be symmetric with a zero diagonal")
    masked = D.astype(np.float64)
    np.fill_diagonal(masked, np.inf)
    return RankTargets(np.argmin(masked, axis=1))


def rank_loss(D_hat, targets, tau: float = 1.0) -> Tensor:
    """Cross-entropy of -D_hat / tau against the nearest-neighbour targets, diagonal masked."""
    if not tau > 0:
        raise ValidationError(f"temperature must be positive, got {tau}")
    values = D_hat.values if isinstance(D_hat, DistanceMatrix) else tc.as_tensor(D_hat)
    b = values.shape[0]
    if values.ndim != 2 or values.shape[1] != b:
        raise DimensionError(f"distance matrix must be square, got shape {values.shape}")
    if not isinstance(targets, RankTargets):
        targets = RankTargets(targets)
    if targets.indices.size != b:
        raise DimensionError(f"{targets.indices.size} targets for a {b}x{b} distance matrix")
    logits = tc.mul(values, -1.0 / tau)
    return tc.cross_entropy_rows(logits, targets.indices, ignore_mask=np.eye(b, dtype=bool))


def select_grp_training(D, row: int) -> int:
    """Batch index of the reference report used as GRP for ``row`` during training."""
    D = np.asarray(D)
    if not 0 <= row < D.shape[0]:
        raise TargetIndexError(f"row {row} is outside a batch of {D.shape[0]}")
    return int(rank_targets(D).indices[row])


# ---------------------------------------------------------------------------
# inference index
# ---------------------------------------------------------------------------

def model_checksum(params: HnnParams) -> str:
    digest = hashlib.sha256()
    for arr in hyperbolic.hnn_to_arrays(params).values():
        digest.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return digest.hexdigest()


@dataclass(frozen=True)
class RetrievalIndex:
    embeddings: np.ndarray
    ids: tuple[str, ...]
    backend: Backend
    model: HnnParams
    model_checksum: str
    built_at: str = ""
    config: BallConfig = field(default_factory=BallConfig)

    def __post_init__(self):
        emb = np.array(self.embeddings, dtype=np.float64)
        if emb.ndim != 2 or emb.shape[0] != len(self.ids):
            raise ValidationError(f"{len(self.ids)} ids for embeddings of shape {emb.shape}")
        emb.flags.writeable = False
        object.__setattr__(self, "embeddings", emb)
        object.__setattr__(self, "ids", tuple(self.ids))

    @property
    def size(self) -> int:
        return len(self.ids)


def _frozen_model(params: HnnParams) -> HnnParams:
    return replace(params, weight=Tensor(params.weight.data), bias=Tensor(params.bias.data))


def index_build(records: Sequence, model: HnnParams, backend=Backend.HYPERBOLIC,
                built_at: str | None = None) -> RetrievalIndex:
    """Embed every record's logits and freeze them with a snapshot of the model."""
    if len(records) == 0:
        raise ValidationError("cannot build an index over an empty corpus")
    backend = Backend.parse(backend)
    logits = np.stack([np.asarray(r.logits, dtype=np.float64) for r in records])
    if logits.shape[1] != model.d_in:
        raise DimensionError(f"record logits have width {logits.shape[1]}, model expects {model.d_in}")
    snapshot = _frozen_model(model)
    with tc.no_grad():
        emb = embed_for_backend(logits, snapshot, backend).data
    if built_at is None:
        built_at = datetime.now(timezone.utc).isoformat(timespec="seconds")
    index = RetrievalIndex(embeddings=emb, ids=tuple(r.id for r in records), backend=backend,
                           model=snapshot, model_checksum=model_checksum(snapshot),
                           built_at=built_at, config=model.config)
    logger.debug("built %s index over %d records", backend.value, index.size)
    return index


def index_distances(index: RetrievalIndex, query_logits) -> np.ndarray:
    """Distances [Q, N] from each query row to every indexed record."""
    q = np.atleast_2d(np.asarray(query_logits.data if isinstance(query_logits, Tensor) else query_logits,
                                 dtype=np.float64))
    if q.shape[1] != index.model.d_in:
        raise DimensionError(f"query width {q.shape[1]} does not match model input width {index.model.d_in}")
    with tc.no_grad():
        points = embed_for_backend(q, index.model, index.backend)
        return cross_distances(points, index.embeddings, index.backend, index.config).data.copy()


def index_query(index: RetrievalIndex, query_logits, k: int) -> list[tuple[str, float]]:
    """Exact k nearest records, ascending distance, ties in insertion order."""
    if not 1 <= k <= index.size:
        raise ValidationError(f"k must lie in [1, {index.size}], got {k}")
    q = np.asarray(query_logits.data if isinstance(query_logits, Tensor) else query_logits, dtype=np.float64)
    if q.ndim != 1:
        raise DimensionError(f"index_query takes one logit vector, got shape {q.shape}")
    dist = index_distances(index, q)[0]
    order = np.argsort(dist, kind="stable")[:k]
    return [(index.ids[i], float(dist[i])) for i in order]


def top1_indices(index: RetrievalIndex, query_logits) -> np.ndarray:
    """Position of the nearest indexed record for every query row."""
    return np.argmin(index_distances(index, query_logits), axis=1)


def save_index(path, index: RetrievalIndex):
    header = {
        "ids": list(index.ids),
        "backend": index.backend.value,
        "config": {"curvature": index.config.curvature, "boundary_eps": index.config.boundary_eps,
                   "artanh_clamp": index.config.artanh_clamp},
        "model_checksum": index.model_checksum,
        "built_at": index.built_at,
    }
    arrays = {"index.embeddings": index.embeddings, **hyperbolic.hnn_to_arrays(index.model)}
    doc = {"header": header, "checkpoint": tc.checkpoint_document(arrays)}
    return utils.atomic_write_text(path, json.dumps(doc, indent=2) + "\n")


def load_index(path) -> RetrievalIndex:
    doc = utils.load_json(path)
    try:
        header = doc["header"]
        arrays, _ = tc.parse_checkpoint_document(doc["checkpoint"])
        config = BallConfig(**header["config"])
        model = hyperbolic.hnn_from_arrays(arrays, requires_grad=False, config=config)
        index = RetrievalIndex(embeddings=arrays["index.embeddings"], ids=tuple(header["ids"]),
                               backend=Backend.parse(header["backend"]), model=model,
                               model_checksum=header["model_checksum"], built_at=header.get("built_at", ""),
                               config=config)
    except KeyError as e:
        raise ValidationError(f"{path} is missing index field {e.args[0]}") from e
    if model_checksum(index.model) != index.model_checksum:
        raise ValidationError(f"{path}: model checksum does not match the stored parameters")
    return index
