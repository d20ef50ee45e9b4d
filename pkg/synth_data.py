"""Synthetic long-tailed report corpus with a fully known generative model.

Labels come first: each of the 18 categories draws a status from its class
prior. Entity logits are a fixed linear read-out of the one-hot statuses
(plus evidence that a finding leaks into its parent category) and Gaussian
noise. Prompts are drawn from fixed per-entity and per-status prototypes.

The generative model (influence matrix, prototypes) depends only on
``world_seed``, so train and test corpora drawn with different seeds share
the same ground truth.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

import utils
from errors import ValidationError
from priors_sheet import default_priors
from supervision import NUM_CATEGORIES, NUM_STATUSES, VECTOR_BITS, Status

logger = logging.getLogger(__name__)

NUM_ENTITIES = 75
NUM_LOCAL_PROMPTS = 12
NUM_GLOBAL_PROMPTS = 8

# Conditional split of the non-positive mass: Blank / Negative / Uncertain.
NON_POSITIVE_SPLIT = (0.85, 0.10, 0.05)

# child category -> parent category; a positive child also shows half of its parent's evidence
CATEGORY_PARENT = {
    1: 0,   # Cardiomegaly -> Enlarged Cardiomediastinum
    3: 2,   # Edema -> Lung Opacity
    4: 2,   # Atelectasis -> Lung Opacity
    7: 2,   # Lung Lesion -> Lung Opacity
    8: 2,   # Consolidation -> Lung Opacity
    9: 8,   # Pneumonia -> Consolidation
    15: 7,  # Nodule -> Lung Lesion
}
PARENT_EVIDENCE = 0.5

# Strength of a category's status on its own entities.
STATUS_WEIGHT = {Status.BLANK: 0.0, Status.POSITIVE: 3.0, Status.NEGATIVE: -1.0, Status.UNCERTAIN: 1.5}
PROMPT_NOISE = 0.2


@dataclass(frozen=True)
class CorpusRecord:
    id: str
    logits: np.ndarray
    labels: tuple[int, ...]
    tokens: tuple[int, ...]
    prompts_local: np.ndarray
    prompts_global: np.ndarray
    prompt_global_ref: str | None = None

    def __post_init__(self):
        logits = np.array(self.logits, dtype=np.float64)
        local = np.array(self.prompts_local, dtype=np.float64)
        glob = np.array(self.prompts_global, dtype=np.float64)
        if logits.ndim != 1:
            raise ValidationError(f"record {self.id}: logits must be a vector, got shape {logits.shape}")
        if local.ndim != 2 or glob.ndim != 2 or local.shape[1] != glob.shape[1]:
            raise ValidationError(f"record {self.id}: prompt matrices {local.shape} / {glob.shape} disagree")
        for name, arr in (("logits", logits), ("prompts_local", local), ("prompts_global", glob)):
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"record {self.id}: {name} must be finite")
            arr.flags.writeable = False
        labels = tuple(int(s) for s in self.labels)
        tokens = tuple(int(s) for s in self.tokens)
        for name, seq in (("labels", labels), ("tokens", tokens)):
            if len(seq) != NUM_CATEGORIES or any(not 0 <= s < NUM_STATUSES for s in seq):
                raise ValidationError(f"record {self.id}: {name} must be {NUM_CATEGORIES} values in 0..3")
        object.__setattr__(self, "logits", logits)
        object.__setattr__(self, "prompts_local", local)
        object.__setattr__(self, "prompts_global", glob)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "tokens", tokens)

    @property
    def d_t(self) -> int:
        return self.prompts_local.shape[1]

    def to_json_dict(self) -> dict:
        return {
            "id": self.id,
            "logits": self.logits.tolist(),
            "labels": list(self.labels),
            "tokens": list(self.tokens),
            "prompts_local": self.prompts_local.tolist(),
            "prompts_global": self.prompts_global.tolist(),
            "prompt_global_ref": self.prompt_global_ref,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "CorpusRecord":
        try:
            return cls(id=str(data["id"]), logits=data["logits"], labels=data["labels"], tokens=data["tokens"],
                       prompts_local=data["prompts_local"], prompts_global=data["prompts_global"],
                       prompt_global_ref=data.get("prompt_global_ref"))
        except KeyError as e:
            raise ValidationError(f"corpus record is missing field {e.args[0]}") from e


@dataclass(frozen=True)
class GenerativeModel:
    influence: np.ndarray          # [72, M] status one-hot -> entity means
    entity_prototypes: np.ndarray  # [M, d_t]
    status_prototypes: np.ndarray  # [18, 4, d_t]

    @property
    def d_t(self) -> int:
        return self.entity_prototypes.shape[1]


def generative_model(d_t: int = 32, world_seed: int = 0) -> GenerativeModel:
    """Fixed ground truth: every category owns a disjoint group of entities."""
    if d_t <= 0:
        raise ValidationError(f"prompt width must be positive, got {d_t}")
    rng = np.random.Generator(np.random.PCG64(world_seed))
    influence = 0.3 * rng.standard_normal((VECTOR_BITS, NUM_ENTITIES))
    owners = np.arange(NUM_ENTITIES) % NUM_CATEGORIES
    for k in range(NUM_CATEGORIES):
        for status, weight in STATUS_WEIGHT.items():
            influence[NUM_STATUSES * k + status, owners == k] += weight
    entity_prototypes = rng.standard_normal((NUM_ENTITIES, d_t)) / np.sqrt(d_t)
    status_prototypes = rng.standard_normal((NUM_CATEGORIES, NUM_STATUSES, d_t)) / np.sqrt(d_t)
    return GenerativeModel(influence=influence, entity_prototypes=entity_prototypes,
                           status_prototypes=status_prototypes)


def _check_priors(class_priors) -> np.ndarray:
    priors = np.asarray(class_priors, dtype=np.float64).reshape(-1)
    if priors.shape != (NUM_CATEGORIES,):
        raise ValidationError(f"expected {NUM_CATEGORIES} class priors, got {priors.size}")
    if not np.all(np.isfinite(priors)) or np.any((priors < 0) | (priors > 1)):
        bad = int(np.argmax(~np.isfinite(priors) | (priors < 0) | (priors > 1)))
        raise ValidationError(f"class prior {bad} must lie in [0, 1], got {priors[bad]}")
    return priors


def sample_statuses(rng: np.random.Generator, n: int, priors: np.ndarray) -> np.ndarray:
    positive = rng.random((n, NUM_CATEGORIES)) < priors
    r = rng.random((n, NUM_CATEGORIES))
    blank, negative, _ = NON_POSITIVE_SPLIT
    other = np.where(r < blank, Status.BLANK, np.where(r < blank + negative, Status.NEGATIVE, Status.UNCERTAIN))
    return np.where(positive, Status.POSITIVE, other).astype(np.int64)


def synth_generate(n: int, seed: int = 0, class_priors=None, noise: float = 0.5, d_t: int = 32,
                   world_seed: int = 0) -> list[CorpusRecord]:
    """Draw ``n`` records; identical arguments give identical corpora."""
    if int(n) < 2:
        raise ValidationError(f"corpus size must be at least 2, got {n}")
    if not (np.isfinite(noise) and noise >= 0):
        raise ValidationError(f"noise must be a non-negative real, got {noise}")
    priors = _check_priors(default_priors() if class_priors is None else class_priors)
    world = generative_model(d_t, world_seed)
    rng = np.random.Generator(np.random.PCG64(seed))
    n = int(n)

    statuses = sample_statuses(rng, n, priors)
    onehot = np.zeros((n, VECTOR_BITS))
    onehot[np.arange(n)[:, None], NUM_STATUSES * np.arange(NUM_CATEGORIES) + statuses] = 1.0

    means = onehot @ world.influence
    for child, parent in CATEGORY_PARENT.items():
        parent_row = world.influence[NUM_STATUSES * parent + Status.POSITIVE]
        means += PARENT_EVIDENCE * (statuses[:, child] == Status.POSITIVE)[:, None] * parent_row
    logits = means + noise * rng.standard_normal((n, NUM_ENTITIES))

    top = np.argsort(-logits, axis=1, kind="stable")[:, :NUM_LOCAL_PROMPTS]
    local_noise = rng.standard_normal((n, NUM_LOCAL_PROMPTS, d_t))
    prompts_local = world.entity_prototypes[top] + PROMPT_NOISE * noise * local_noise / np.sqrt(d_t)

    per_status = world.status_prototypes[np.arange(NUM_CATEGORIES), statuses]  # [n, 18, d_t]
    sentence = np.arange(NUM_CATEGORIES) % NUM_GLOBAL_PROMPTS
    prompts_global = np.stack([per_status[:, sentence == s].mean(axis=1) for s in range(NUM_GLOBAL_PROMPTS)], axis=1)
    global_noise = rng.standard_normal((n, NUM_GLOBAL_PROMPTS, d_t))
    prompts_global = prompts_global + PROMPT_NOISE * noise * global_noise / np.sqrt(d_t)

    records = [
        CorpusRecord(id=f"s{seed}-{i:06d}", logits=logits[i], labels=tuple(statuses[i]), tokens=tuple(statuses[i]),
                     prompts_local=prompts_local[i], prompts_global=prompts_global[i])
        for i in range(n)
    ]
    logger.debug("generated %d records (seed=%s, noise=%s)", n, seed, noise)
    return records


def positive_rates(records: Sequence[CorpusRecord]) -> np.ndarray:
    labels = np.array([r.labels for r in records])
    return (labels == Status.POSITIVE).mean(axis=0)


def corpus_to_text(records: Sequence[CorpusRecord]) -> str:
    return "".join(json.dumps(r.to_json_dict(), separators=(",", ":")) + "\n" for r in records)


def write_corpus(path, records: Sequence[CorpusRecord]):
    """JSON-lines, one record per line (atomic)."""
    return utils.atomic_write_text(path, corpus_to_text(records))


def read_corpus(path) -> list[CorpusRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValidationError(f"{path}:{lineno}: not a JSON record: {e}") from e
            records.append(CorpusRecord.from_json_dict(data))
    check_corpus(records)
    return records


def check_corpus(records: Sequence[CorpusRecord]):
    """Unique ids and one logit / prompt width across the corpus."""
    if not records:
        raise ValidationError("corpus is empty")
    seen = set()
    for r in records:
        if r.id in seen:
            raise ValidationError(f"duplicate record id '{r.id}'")
        seen.add(r.id)
    widths = {(r.logits.shape[0], r.d_t, r.prompts_local.shape[0], r.prompts_global.shape[0]) for r in records}
    if len(widths) != 1:
        raise ValidationError(f"corpus mixes record shapes: {sorted(widths)}")
