"""End-to-end desk-scale training of the retrieval + fusion model.

One step on a batch of records:

1. Hamming distances between status vectors give the rank targets.
2. The HNN embeds entity logits; in-batch distances feed the ranking loss.
3. Each record borrows the global prompts of its Hamming-nearest batch
   partner (the training-time GRP); its own entity prompts are the LRPs.
4. Both prompt sets attend over the frozen visual stem's features, the two
   fused maps are concatenated and mean-pooled, and a linear head predicts
   the 18 status tokens.
5. FCC ties prompt similarities to the overlap of the two attention maps.

``predict_tokens`` runs steps 3-4 without a tape, with the GRP taken from
whatever record each query's ``prompt_global_ref`` names.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

import hyperbolic
import ot_attention
import supervision
import tensor_core as tc
from alignment_losses import (LossWeights, cosine_similarity_matrix, fcc_loss, iou_matrix, sigmoid_normalize,
                              task_loss_tokens, total_loss)
from config import RunConfig
from errors import DimensionError, NumericError, ValidationError
from hyperbolic import BallConfig, HnnParams
from lre_retrieval import embed_for_backend, pairwise_distances, rank_loss, rank_targets, select_grp_training
from optim import AdamW, AdamWConfig, learning_rate
from ot_attention import AttentionParams, OTConfig
from synth_data import NUM_ENTITIES, CorpusRecord, check_corpus
from tensor_core import Tensor
from workers import check_abort, report

logger = logging.getLogger(__name__)

HEAD_OUT = supervision.VECTOR_BITS


@dataclass
class FusionModel:
    hnn: HnnParams
    branch_g: AttentionParams
    branch_l: AttentionParams
    head_weight: Tensor
    head_bias: Tensor
    stem: np.ndarray  # frozen [M, L * d_v]
    spatial: int

    @property
    def d_in(self) -> int:
        return self.hnn.d_in

    @property
    def d_v(self) -> int:
        return self.branch_g.d_v

    @property
    def d_t(self) -> int:
        return self.branch_g.d_t

    def parameters(self) -> dict[str, Tensor]:
        params = dict(self.hnn.parameters())
        params.update(self.branch_g.parameters("mpsa.g"))
        params.update(self.branch_l.parameters("mpsa.l"))
        params["head.weight"] = self.head_weight
        params["head.bias"] = self.head_bias
        return params

    def to_arrays(self) -> dict[str, np.ndarray]:
        arrays = hyperbolic.hnn_to_arrays(self.hnn)
        arrays.update(ot_attention.attention_to_arrays(self.branch_g, "mpsa.g"))
        arrays.update(ot_attention.attention_to_arrays(self.branch_l, "mpsa.l"))
        arrays["head.weight"] = self.head_weight.data
        arrays["head.bias"] = self.head_bias.data
        arrays["stem.weight"] = self.stem
        return arrays


@dataclass(frozen=True)
class LossBreakdown:
    task: Tensor
    rank: Tensor
    fcc: Tensor
    total: Tensor
    grp_rows: tuple[int, ...]
    map_g: Tensor
    map_l: Tensor
    grp_refs: tuple[str, ...] = ()

    def values(self) -> dict[str, float]:
        return {"total": self.total.item(), "task": self.task.item(), "rank": self.rank.item(),
                "fcc": self.fcc.item()}


@dataclass
class TrainResult:
    model: FusionModel
    config: RunConfig
    loss_curve: list[float] = field(default_factory=list)
    term_curves: dict[str, list[float]] = field(default_factory=dict)

    def curve_document(self) -> dict:
        return {"loss": list(self.loss_curve), **{k: list(v) for k, v in self.term_curves.items()}}


def ball_config(config: RunConfig) -> BallConfig:
    return BallConfig(curvature=config.curvature)


def ot_config(config: RunConfig) -> OTConfig:
    return OTConfig(epsilon=config.epsilon, iterations=config.sinkhorn_iters)


def init_model(config: RunConfig, d_in: int = NUM_ENTITIES,
               records: Sequence[CorpusRecord] | None = None) -> FusionModel:
    """Seeded initialisation; the visual stem is drawn here and never trained.

    Given ``records``, the HNN input standardisation is fitted to their logits.
    """
    seeds = np.random.SeedSequence(config.seed).generate_state(5)
    hnn = hyperbolic.init_hnn(d_in, config.d_h, ball_config(config), seed=int(seeds[0]))
    if records:
        hnn = hyperbolic.fit_input_standardisation(hnn, np.stack([r.logits for r in records]))
    branch_g = ot_attention.init_attention_params(config.d_v, config.d_t, config.d_a, int(seeds[1]), config.ln_eps)
    branch_l = ot_attention.init_attention_params(config.d_v, config.d_t, config.d_a, int(seeds[2]), config.ln_eps)
    rng = np.random.Generator(np.random.PCG64(int(seeds[3])))
    bound = 1.0 / math.sqrt(2 * config.d_v)
    head_weight = Tensor(rng.uniform(-bound, bound, size=(2 * config.d_v, HEAD_OUT)), requires_grad=True)
    stem_rng = np.random.Generator(np.random.PCG64(int(seeds[4])))
    stem = stem_rng.standard_normal((d_in, config.spatial * config.d_v)) / math.sqrt(d_in)
    stem.flags.writeable = False
    return FusionModel(hnn=hnn, branch_g=branch_g, branch_l=branch_l, head_weight=head_weight,
                       head_bias=Tensor(np.zeros(HEAD_OUT), requires_grad=True), stem=stem,
                       spatial=config.spatial)


def visual_features(model: FusionModel, logits: np.ndarray) -> Tensor:
    """Frozen stand-in for the image encoder: [B, M] logits -> [B, L, d_v] features."""
    feats = np.tanh(np.asarray(logits, dtype=np.float64) @ model.stem)
    return Tensor(feats.reshape(feats.shape[0], model.spatial, model.d_v))


def check_compatible(model: FusionModel, records: Sequence[CorpusRecord]):
    width, d_t = records[0].logits.shape[0], records[0].d_t
    if width != model.d_in:
        raise ValidationError(f"corpus logits have width {width}, model expects {model.d_in}")
    if d_t != model.d_t:
        raise ValidationError(f"corpus prompts have width {d_t}, model expects {model.d_t}")


def fused_token_logits(model: FusionModel, logits: np.ndarray, F_t_g, F_t_l, config: RunConfig):
    """Both attention branches, concat, mean-pool and the head: ([B * 18, 4] logits, map_g, map_l)."""
    b = logits.shape[0]
    F_v = visual_features(model, logits)
    ot = ot_config(config)
    att_g, map_g = ot_attention.cross_attention(F_v, F_t_g, model.branch_g, config.attention, ot)
    att_l, map_l = ot_attention.cross_attention(F_v, F_t_l, model.branch_l, config.attention, ot)
    F_c = ot_attention.fuse_concat(ot_attention.fuse_residual(att_g, F_v, model.branch_g),
                                   ot_attention.fuse_residual(att_l, F_v, model.branch_l))
    pooled = tc.reduce_mean(F_c, axis=1)
    head = tc.matmul(pooled, model.head_weight)
    head = tc.add(head, tc.broadcast_to(model.head_bias, head.shape))
    token_logits = tc.reshape(head, (b * supervision.NUM_CATEGORIES, supervision.NUM_STATUSES))
    return token_logits, map_g, map_l


def assign_grp_refs(records: Sequence[CorpusRecord], sources: Sequence[CorpusRecord]) -> list[CorpusRecord]:
    """Point each record's prompt_global_ref at the id of the record whose global prompts it borrows."""
    if len(records) != len(sources):
        raise ValidationError(f"{len(records)} records but {len(sources)} GRP sources")
    return [replace(r, prompt_global_ref=s.id) for r, s in zip(records, sources)]


def grp_prompts(records: Sequence[CorpusRecord], pool: Sequence[CorpusRecord]) -> np.ndarray:
    """[B, P_g, d_t] global prompts looked up through each record's prompt_global_ref."""
    by_id = {r.id: r for r in pool}
    missing = [r.id for r in records if r.prompt_global_ref not in by_id]
    if missing:
        raise ValidationError(f"record {missing[0]} has no resolvable prompt_global_ref")
    return np.stack([by_id[r.prompt_global_ref].prompts_global for r in records])


def forward_losses(model: FusionModel, batch: Sequence[CorpusRecord], config: RunConfig) -> LossBreakdown:
    b = len(batch)
    labels = [r.labels for r in batch]
    D = supervision.hamming_matrix(supervision.status_vectors(labels))
    targets = rank_targets(D)

    logits = np.stack([r.logits for r in batch])
    points = embed_for_backend(Tensor(logits), model.hnn, config.backend)
    D_hat = pairwise_distances(points, config.backend, model.hnn.config)
    l_rank = rank_loss(D_hat, targets, config.tau)

    grp_rows = tuple(select_grp_training(D, i) for i in range(b))
    batch = assign_grp_refs(batch, [batch[j] for j in grp_rows])
    F_t_g = Tensor(grp_prompts(batch, batch))
    F_t_l = Tensor(np.stack([r.prompts_local for r in batch]))
    token_logits, map_g, map_l = fused_token_logits(model, logits, F_t_g, F_t_l, config)
    tokens = np.array([r.tokens for r in batch], dtype=np.int64).reshape(-1)
    l_task = task_loss_tokens(token_logits, tokens)

    S = sigmoid_normalize(cosine_similarity_matrix(F_t_g, F_t_l))
    O = iou_matrix(tc.transpose(map_g), tc.transpose(map_l))
    l_fcc = fcc_loss(S, O)

    terms = {"task": l_task, "rank": l_rank, "fcc": l_fcc}
    bad = [name for name, t in terms.items() if not np.isfinite(t.item())]
    if bad:
        breakdown = ", ".join(f"{name}={t.item()!r}" for name, t in terms.items())
        raise NumericError(f"non-finite {'/'.join(bad)} loss ({breakdown})")
    total = total_loss(l_task, l_rank, l_fcc, LossWeights(config.alpha, config.beta))
    return LossBreakdown(task=l_task, rank=l_rank, fcc=l_fcc, total=total, grp_rows=grp_rows,
                         map_g=map_g, map_l=map_l, grp_refs=tuple(r.prompt_global_ref for r in batch))


def predict_tokens(model: FusionModel, queries: Sequence[CorpusRecord], pool: Sequence[CorpusRecord],
                   config: RunConfig, chunk: int = 256) -> np.ndarray:
    """Inference forward: argmax status per category, [Q, 18].

    Every query must carry a prompt_global_ref into ``pool`` (the retrieved
    record); its local prompts are its own.
    """
    if chunk < 1:
        raise ValidationError(f"chunk must be positive, got {chunk}")
    out = []
    with tc.no_grad():
        for start in range(0, len(queries), chunk):
            part = queries[start:start + chunk]
            logits = np.stack([r.logits for r in part])
            F_t_g = Tensor(grp_prompts(part, pool))
            F_t_l = Tensor(np.stack([r.prompts_local for r in part]))
            token_logits, _, _ = fused_token_logits(model, logits, F_t_g, F_t_l, config)
            pred = np.argmax(token_logits.data, axis=1)
            out.append(pred.reshape(len(part), supervision.NUM_CATEGORIES))
    return np.concatenate(out, axis=0)


def batch_schedule(n: int, config: RunConfig) -> list[np.ndarray]:
    """Batch indices for every step, drawn without replacement within a step."""
    rng = np.random.Generator(np.random.PCG64(config.seed))
    return [rng.choice(n, size=config.batch_size, replace=False) for _ in range(config.steps)]


def train(config: RunConfig, records: Sequence[CorpusRecord], worker=None, model: FusionModel | None = None) -> TrainResult:
    """AdamW over ``config.steps`` batches; returns the trained model and per-step losses."""
    check_corpus(records)
    if len(records) < config.batch_size:
        raise ValidationError(f"corpus of {len(records)} records is smaller than batch_size {config.batch_size}")
    if records[0].d_t != config.d_t:
        raise DimensionError(f"corpus prompts have width {records[0].d_t}, config says d_t={config.d_t}")
    model = model or init_model(config, d_in=records[0].logits.shape[0], records=records)
    check_compatible(model, records)

    optimizer = AdamW(model.parameters(), AdamWConfig(lr=config.lr, weight_decay=config.weight_decay))
    result = TrainResult(model=model, config=config, term_curves={"task": [], "rank": [], "fcc": []})
    report(worker, f"TOTAL:{config.steps}")
    report(worker, "STATE:TRAIN")
    for step, idx in enumerate(batch_schedule(len(records), config)):
        check_abort(worker)
        batch = [records[i] for i in idx]
        optimizer.zero_grad()
        try:
            losses = forward_losses(model, batch, config)
        except NumericError as e:
            raise NumericError(f"step {step + 1}: {e}") from e
        losses.total.backward()
        optimizer.step(learning_rate(config.lr_schedule, config.lr, step, config.steps))
        values = losses.values()
        result.loss_curve.append(values["total"])
        for name in ("task", "rank", "fcc"):
            result.term_curves[name].append(values[name])
        report(worker, f"PROGRESS:{step + 1}")
        if step == 0 or (step + 1) % 50 == 0:
            logger.debug("step %d: total=%.6f task=%.6f rank=%.6f fcc=%.6f", step + 1, values["total"],
                         values["task"], values["rank"], values["fcc"])
    logger.info("trained %d steps, loss %.4f -> %.4f", config.steps, result.loss_curve[0], result.loss_curve[-1])
    return result


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_model(path, model: FusionModel, config: RunConfig):
    return tc.save_checkpoint(path, model.to_arrays(), meta={"config": config.to_dict()})


def model_from_arrays(arrays, config: RunConfig) -> FusionModel:
    hnn = hyperbolic.hnn_from_arrays(arrays)
    try:
        stem = np.array(arrays["stem.weight"])
        head_weight, head_bias = arrays["head.weight"], arrays["head.bias"]
    except KeyError as e:
        raise ValidationError(f"checkpoint is missing {e.args[0]}") from e
    branch_g = ot_attention.attention_from_arrays(arrays, "mpsa.g", ln_eps=config.ln_eps)
    branch_l = ot_attention.attention_from_arrays(arrays, "mpsa.l", ln_eps=config.ln_eps)
    if stem.shape != (hnn.d_in, config.spatial * branch_g.d_v):
        raise DimensionError(f"stem weight {stem.shape} does not match d_in={hnn.d_in}, "
                             f"spatial={config.spatial}, d_v={branch_g.d_v}")
    stem.flags.writeable = False
    return FusionModel(hnn=hnn, branch_g=branch_g, branch_l=branch_l,
                       head_weight=Tensor(head_weight, requires_grad=True),
                       head_bias=Tensor(head_bias, requires_grad=True), stem=stem, spatial=config.spatial)


def load_model(path) -> tuple[FusionModel, RunConfig]:
    arrays, meta = tc.load_checkpoint(path)
    if "config" not in meta:
        raise ValidationError(f"{path} does not record the run configuration")
    config = RunConfig.from_dict(meta["config"])
    return model_from_arrays(arrays, config), config
