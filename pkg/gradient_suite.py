"""Finite-difference checks of the three differentiable loss paths.

Each target draws ``points`` random smooth points and reports the worst
relative error of ``tensor_core.grad_check`` over them. A fixed unit linear
tilt is added to every checked function so that no coordinate's derivative
sits near zero, where the relative error would only measure round-off.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

import tensor_core as tc
from alignment_losses import cosine_similarity_matrix, fcc_loss, iou_matrix, sigmoid_normalize
from errors import ValidationError
from hyperbolic import BallConfig, HnnParams, hnn_embed
from lre_retrieval import pairwise_distances, rank_loss, rank_targets
from ot_attention import AttentionParams, OTConfig, fuse_residual, init_attention_params, mpsa_attention
from supervision import hamming_matrix, status_vectors
from tensor_core import Tensor

logger = logging.getLogger(__name__)

TARGETS = ("rank", "fcc", "mpsa")
TOLERANCE = 1e-5
STEP = 1e-6
MIN_TIE_GAP = 1e-4


@dataclass(frozen=True)
class GradCheckResult:
    target: str
    worst_rel_err: float
    points: int

    @property
    def passed(self) -> bool:
        return self.worst_rel_err < TOLERANCE


def _tilted(f):
    return lambda x: tc.add(f(x), tc.reduce_sum(x))


def _rng(seed: int, target: str) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64([seed, TARGETS.index(target)]))


def rank_path_point(rng: np.random.Generator, batch: int = 5, d_in: int = 6, d_h: int = 3):
    """HNN weight -> ball embeddings -> pairwise geodesics -> ranking CE."""
    logits = rng.standard_normal((batch, d_in))
    labels = rng.integers(0, 4, size=(batch, 18))
    targets = rank_targets(hamming_matrix(status_vectors(labels)))
    bias = Tensor(0.1 * rng.standard_normal(d_h))
    config = BallConfig()

    def f(weight):
        params = HnnParams(weight=weight, bias=bias, config=config)
        return rank_loss(pairwise_distances(hnn_embed(logits, params), "hyperbolic", config), targets)

    return f, 0.3 * rng.standard_normal((d_in, d_h))


def fcc_path_point(rng: np.random.Generator, n: int = 3, p: int = 4, d: int = 5, length: int = 6):
    """Prompts -> (cosine -> sigmoid) x (softmax maps -> soft IoU) -> FCC."""
    proj = rng.standard_normal((d, length))
    while True:
        point = rng.standard_normal(((n + p) * d,))
        prompts = point.reshape(n + p, d)
        maps = np.exp(prompts @ proj)
        maps /= maps.sum(axis=1, keepdims=True)
        gap = np.abs(maps[:n, None, :] - maps[None, n:, :]).min()
        if gap > MIN_TIE_GAP:
            break

    def f(x):
        prompts = tc.reshape(x, (n + p, d))
        F_g = tc.take_rows(prompts, np.arange(n))
        F_l = tc.take_rows(prompts, np.arange(n, n + p))
        S = sigmoid_normalize(cosine_similarity_matrix(F_g, F_l))
        O = iou_matrix(tc.softmax_rows(tc.matmul(F_g, proj)), tc.softmax_rows(tc.matmul(F_l, proj)))
        return fcc_loss(S, O)

    return f, point


def mpsa_path_point(rng: np.random.Generator, which: str = "W_q", length: int = 6, prompts: int = 4,
                    d_v: int = 4, d_t: int = 5, d_a: int = 3):
    """One projection -> Sinkhorn attention -> residual fusion, weighted by a fixed random R."""
    params = init_attention_params(d_v, d_t, d_a, seed=int(rng.integers(2 ** 32)))
    F_v = rng.standard_normal((length, d_v))
    F_t = rng.standard_normal((prompts, d_t))
    weights = rng.standard_normal((length, d_v))
    ot = OTConfig(epsilon=0.1, iterations=5)

    def f(x):
        fields = {name: getattr(params, name) for name in AttentionParams.NAMES}
        fields[which] = x
        branch = AttentionParams(**fields, ln_eps=params.ln_eps)
        attended, _ = mpsa_attention(F_v, F_t, branch, ot)
        return tc.reduce_sum(tc.mul(fuse_residual(attended, F_v, branch), weights))

    return f, getattr(params, which).data.copy()


def check_target(target: str, seed: int = 0, points: int = 20) -> GradCheckResult:
    if target not in TARGETS:
        raise ValidationError(f"unknown gradcheck target '{target}' (choose from {', '.join(TARGETS)}, all)")
    rng = _rng(seed, target)
    worst = 0.0
    for i in range(points):
        if target == "rank":
            f, point = rank_path_point(rng)
        elif target == "fcc":
            f, point = fcc_path_point(rng)
        else:
            f, point = mpsa_path_point(rng, which=("W_q", "W_k", "W_v")[i % 3])
        err = tc.grad_check(_tilted(f), point, h=STEP)
        logger.debug("%s point %d: rel-err %.3e", target, i, err)
        worst = max(worst, err)
    return GradCheckResult(target=target, worst_rel_err=worst, points=points)


def run_suite(target: str = "all", seed: int = 0, points: int = 20) -> list[GradCheckResult]:
    names = TARGETS if target == "all" else (target,)
    return [check_target(name, seed, points) for name in names]
