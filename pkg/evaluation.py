"""Retrieval quality of a trained model against a brute-force Hamming oracle.

Retrieval is scored on the index alone. The fusion head is scored with the
inference forward: every test record borrows the global prompts of its
top-1 retrieved training record, so the attention mode and the FCC weight
show up in the token metrics.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

import supervision
import utils
from config import RunConfig
from errors import ValidationError
from lre_retrieval import index_build, top1_indices
from supervision import NUM_CATEGORIES, Status
from synth_data import CorpusRecord, check_corpus
from training import FusionModel, assign_grp_refs, check_compatible, load_model, predict_tokens

logger = logging.getLogger(__name__)

HEAD_THRESHOLD = 0.10


@dataclass(frozen=True)
class EvalReport:
    p_at_1: float
    mean_retrieved_hamming: float
    mean_oracle_hamming: float
    per_class_hit_rate: tuple[float, ...]
    per_class_support: tuple[int, ...]
    head_classes: tuple[int, ...]
    tail_classes: tuple[int, ...]
    head_hit_rate: float
    tail_hit_rate: float
    n_queries: int
    n_database: int
    token_accuracy: float = 0.0
    per_class_f1: tuple[float, ...] = ()
    head_f1: float = 0.0
    tail_f1: float = 0.0
    loss_curve: tuple[float, ...] = ()
    config: dict = field(default_factory=dict)
    wall_time: float = 0.0

    def __post_init__(self):
        for name in ("p_at_1", "token_accuracy", "head_f1", "tail_f1"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValidationError(f"{name} must lie in [0, 1], got {value}")
        if any(not 0.0 <= r <= 1.0 for r in self.per_class_hit_rate):
            raise ValidationError("per-class hit rates must lie in [0, 1]")
        if any(not 0.0 <= r <= 1.0 for r in self.per_class_f1):
            raise ValidationError("per-class F1 scores must lie in [0, 1]")

    def metrics(self) -> dict:
        """Everything except wall_time, so repeated runs compare byte for byte."""
        doc = asdict(self)
        doc.pop("wall_time")
        for key in ("per_class_hit_rate", "per_class_support", "head_classes", "tail_classes", "per_class_f1",
                    "loss_curve"):
            doc[key] = list(doc[key])
        return doc


def label_matrix(records: Sequence[CorpusRecord]) -> np.ndarray:
    return np.array([r.labels for r in records], dtype=np.int64)


def oracle_hamming(queries: Sequence[CorpusRecord], database: Sequence[CorpusRecord]) -> np.ndarray:
    """Exhaustive [Q, N] Hamming distances, one database scan per query."""
    db = supervision.status_vectors(r.labels for r in database)
    return np.stack([supervision.hamming_to_database(supervision.encode_status_vector(q.labels), db)
                     for q in queries])


def head_tail_split(train_records: Sequence[CorpusRecord]) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Head classes have a training Positive rate above 10%."""
    rates = (label_matrix(train_records) == Status.POSITIVE).mean(axis=0)
    head = tuple(int(k) for k in np.flatnonzero(rates > HEAD_THRESHOLD))
    tail = tuple(int(k) for k in np.flatnonzero(rates <= HEAD_THRESHOLD))
    return head, tail


def positive_f1(predicted: np.ndarray, truth: np.ndarray) -> tuple[float, ...]:
    """Per-category F1 of the Positive status; 0 where a category has neither predictions nor support."""
    pred_pos = np.asarray(predicted) == Status.POSITIVE
    true_pos = np.asarray(truth) == Status.POSITIVE
    tp = (pred_pos & true_pos).sum(axis=0)
    fp = (pred_pos & ~true_pos).sum(axis=0)
    fn = (~pred_pos & true_pos).sum(axis=0)
    denom = 2 * tp + fp + fn
    return tuple(float(2 * t / d) if d else 0.0 for t, d in zip(tp, denom))


def _group_rate(rates, support, group) -> float:
    values = [rates[k] for k in group if support[k] > 0]
    return float(np.mean(values)) if values else 0.0


def evaluate(model: FusionModel, config: RunConfig, train_records: Sequence[CorpusRecord],
             test_records: Sequence[CorpusRecord], loss_curve: Sequence[float] = ()) -> EvalReport:
    """Index the training corpus, retrieve the top-1 for every test record and score it."""
    start = time.perf_counter()
    check_corpus(train_records)
    check_corpus(test_records)
    check_compatible(model, train_records)
    check_compatible(model, test_records)

    index = index_build(train_records, model.hnn, config.backend, built_at="")
    query_logits = np.stack([r.logits for r in test_records])
    top1 = top1_indices(index, query_logits)

    hamming = oracle_hamming(test_records, train_records)
    rows = np.arange(len(test_records))
    retrieved = hamming[rows, top1]
    best = hamming.min(axis=1)

    test_pos = label_matrix(test_records) == Status.POSITIVE
    hit_pos = label_matrix(train_records)[top1] == Status.POSITIVE
    support = test_pos.sum(axis=0)
    rates = [float(hit_pos[test_pos[:, k], k].mean()) if support[k] else 0.0 for k in range(NUM_CATEGORIES)]
    head, tail = head_tail_split(train_records)

    queries = assign_grp_refs(test_records, [train_records[i] for i in top1])
    predicted = predict_tokens(model, queries, train_records, config)
    truth = np.array([r.tokens for r in test_records], dtype=np.int64)
    f1 = positive_f1(predicted, truth)

    report = EvalReport(
        p_at_1=float(np.mean(retrieved == best)),
        mean_retrieved_hamming=float(np.mean(retrieved)),
        mean_oracle_hamming=float(np.mean(best)),
        per_class_hit_rate=tuple(rates),
        per_class_support=tuple(int(s) for s in support),
        head_classes=head,
        tail_classes=tail,
        head_hit_rate=_group_rate(rates, support, head),
        tail_hit_rate=_group_rate(rates, support, tail),
        n_queries=len(test_records),
        n_database=len(train_records),
        token_accuracy=float(np.mean(predicted == truth)),
        per_class_f1=f1,
        head_f1=_group_rate(f1, support, head),
        tail_f1=_group_rate(f1, support, tail),
        loss_curve=tuple(float(v) for v in loss_curve),
        config=config.to_dict(),
        wall_time=time.perf_counter() - start,
    )
    logger.info("p@1 %.4f, mean retrieved Hamming %.3f (oracle %.3f), token accuracy %.4f", report.p_at_1,
                report.mean_retrieved_hamming, report.mean_oracle_hamming, report.token_accuracy)
    return report


def evaluate_checkpoint(path, train_records, test_records, loss_curve=()) -> EvalReport:
    model, config = load_model(path)
    return evaluate(model, config, train_records, test_records, loss_curve)


def write_metrics(path, report: EvalReport):
    return utils.write_json(path, report.metrics())
