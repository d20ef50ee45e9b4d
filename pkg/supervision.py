"""Status vectors and Hamming ("hashing") distances between report labels.

Each report carries one of four statuses for each of 18 disease categories.
A status vector packs them as 18 consecutive one-hot blocks of 4 bits, so
two reports that disagree on k categories sit at Hamming distance 2k.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Iterable, Sequence

import numpy as np

from errors import ValidationError

NUM_CATEGORIES = 18
NUM_STATUSES = 4
VECTOR_BITS = NUM_CATEGORIES * NUM_STATUSES


class Status(IntEnum):
    BLANK = 0
    POSITIVE = 1
    NEGATIVE = 2
    UNCERTAIN = 3


# Index order follows the long-tail class table; the last four complete the 18 categories.
CATEGORY_NAMES = (
    "Enlarged Cardiomediastinum",
    "Cardiomegaly",
    "Lung Opacity",
    "Edema",
    "Atelectasis",
    "Pleural Effusion",
    "Support Devices",
    "Lung Lesion",
    "Consolidation",
    "Pneumonia",
    "Pneumothorax",
    "Pleural Other",
    "Fracture",
    "No Finding",
    "Pleural Thickening",
    "Nodule",
    "Emphysema",
    "Hernia",
)


@dataclass(frozen=True)
class StatusVector:
    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=np.uint8).reshape(-1)
        if bits.shape != (VECTOR_BITS,):
            raise ValidationError(f"status vector needs {VECTOR_BITS} bits, got {bits.size}")
        if np.any(bits > 1):
            raise ValidationError("status vector bits must be 0 or 1")
        blocks = bits.reshape(NUM_CATEGORIES, NUM_STATUSES).sum(axis=1)
        if np.any(blocks != 1):
            bad = int(np.argmax(blocks != 1))
            raise ValidationError(f"category {bad} does not have exactly one status bit set")
        bits.flags.writeable = False
        object.__setattr__(self, "bits", bits)

    def popcount(self) -> int:
        return int(self.bits.sum())


@dataclass(frozen=True)
class LabelRecord:
    id: str
    statuses: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "statuses", tuple(int(s) for s in self.statuses))
        _check_statuses(self.statuses)

    @classmethod
    def from_corpus_record(cls, record) -> "LabelRecord":
        return cls(id=record.id, statuses=tuple(record.labels))

    def status_vector(self) -> StatusVector:
        return encode_status_vector(self.statuses)


def _check_statuses(statuses: Sequence[int]):
    if len(statuses) != NUM_CATEGORIES:
        raise ValidationError(f"expected {NUM_CATEGORIES} statuses, got {len(statuses)}")
    for k, s in enumerate(statuses):
        if int(s) not in (0, 1, 2, 3):
            raise ValidationError(f"category {k} has status {s}, expected one of 0..3")


def encode_status_vector(statuses: Sequence[int]) -> StatusVector:
    """Set bit 4k + status_k for every category k."""
    _check_statuses(statuses)
    bits = np.zeros(VECTOR_BITS, dtype=np.uint8)
    bits[NUM_STATUSES * np.arange(NUM_CATEGORIES) + np.asarray(statuses, dtype=np.int64)] = 1
    return StatusVector(bits)


def decode_status_vector(vector: StatusVector) -> tuple[int, ...]:
    """Per-block argmax, the inverse of :func:`encode_status_vector`."""
    return tuple(int(s) for s in vector.bits.reshape(NUM_CATEGORIES, NUM_STATUSES).argmax(axis=1))


def hamming_distance(u: StatusVector, v: StatusVector) -> int:
    return int(np.count_nonzero(u.bits != v.bits))


def _bit_matrix(batch: Sequence[StatusVector]) -> np.ndarray:
    if len(batch) == 0:
        return np.zeros((0, VECTOR_BITS), dtype=np.uint8)
    return np.stack([v.bits for v in batch])


def hamming_matrix(batch: Sequence[StatusVector]) -> np.ndarray:
    """D_ij = hamming_distance(v_i, v_j) over a batch of at least two vectors."""
    bits = _bit_matrix(batch)
    if bits.shape[0] < 2:
        raise ValidationError(f"hamming_matrix needs at least 2 vectors, got {bits.shape[0]}")
    ints = bits.astype(np.int64)
    counts = ints.sum(axis=1)
    return counts[:, None] + counts[None, :] - 2 * (ints @ ints.T)


def hamming_to_database(query: StatusVector, database: Sequence[StatusVector]) -> np.ndarray:
    """Distances from one vector to every database vector (no size floor)."""
    bits = _bit_matrix(database)
    ints = bits.astype(np.int64)
    q = query.bits.astype(np.int64)
    return ints.sum(axis=1) + int(q.sum()) - 2 * (ints @ q)


def status_vectors(label_rows: Iterable[Sequence[int]]) -> list[StatusVector]:
    return [encode_status_vector(row) for row in label_rows]
