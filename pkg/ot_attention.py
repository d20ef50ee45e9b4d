"""Sinkhorn (optimal-transport) cross-attention between visual positions and text prompts.

Attention maps are laid out rows = spatial positions, columns = prompts,
with every row summing to 1. Under MPSA the map is an entropic transport
plan rescaled row-wise; the softmax variant is plain cross-attention and
serves as the ablation baseline. Every function accepts one leading batch
axis.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

import tensor_core as tc
from errors import DimensionError, NumericError, ValidationError
from tensor_core import Tensor

logger = logging.getLogger(__name__)

ATTENTION_MODES = ("mpsa", "softmax")


@dataclass(frozen=True)
class OTConfig:
    epsilon: float = 0.05
    iterations: int = 10
    row_marginal: tuple[float, ...] | None = None
    col_marginal: tuple[float, ...] | None = None

    def __post_init__(self):
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise ValidationError(f"epsilon must be positive, got {self.epsilon}")
        if int(self.iterations) < 1:
            raise ValidationError(f"iterations must be >= 1, got {self.iterations}")


@dataclass
class AttentionParams:
    """Projections of one attention branch and its residual fusion."""

    W_q: Tensor
    W_k: Tensor
    W_v: Tensor
    W_proj: Tensor
    ln_gain: Tensor
    ln_bias: Tensor
    W_out: Tensor
    b_out: Tensor
    ln_eps: float = 1e-5

    NAMES = ("W_q", "W_k", "W_v", "W_proj", "ln_gain", "ln_bias", "W_out", "b_out")

    def __post_init__(self):
        d_v, d_a = self.W_q.shape
        d_t = self.W_k.shape[0]
        expected = {
            "W_k": (d_t, d_a), "W_v": (d_t, d_a), "W_proj": (d_a, d_v),
            "ln_gain": (d_v,), "ln_bias": (d_v,), "W_out": (d_v, d_v), "b_out": (d_v,),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise DimensionError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if d_a <= 0:
            raise DimensionError("attention width d_a must be positive")
        if not tc.parameters_finite(self.tensors()):
            raise ValidationError("attention parameters must be finite")

    @property
    def d_v(self) -> int:
        return self.W_q.shape[0]

    @property
    def d_t(self) -> int:
        return self.W_k.shape[0]

    @property
    def d_a(self) -> int:
        return self.W_q.shape[1]

    def tensors(self) -> list[Tensor]:
        return [getattr(self, name) for name in self.NAMES]

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.{name}": getattr(self, name) for name in self.NAMES}


@dataclass(frozen=True)
class TransportPlan:
    plan: Tensor
    epsilon: float
    iterations: int
    row_residual: float
    col_residual: float
    residual_history: tuple[tuple[float, float], ...] = field(default=())


def init_attention_params(d_v: int, d_t: int, d_a: int, seed: int = 0, ln_eps: float = 1e-5) -> AttentionParams:
    rng = np.random.Generator(np.random.PCG64(seed))

    def fan_in(rows, cols):
        bound = 1.0 / math.sqrt(rows)
        return Tensor(rng.uniform(-bound, bound, size=(rows, cols)), requires_grad=True)

    return AttentionParams(
        W_q=fan_in(d_v, d_a), W_k=fan_in(d_t, d_a), W_v=fan_in(d_t, d_a), W_proj=fan_in(d_a, d_v),
        ln_gain=Tensor(np.ones(d_v), requires_grad=True), ln_bias=Tensor(np.zeros(d_v), requires_grad=True),
        W_out=fan_in(d_v, d_v), b_out=Tensor(np.zeros(d_v), requires_grad=True), ln_eps=ln_eps,
    )


def attention_to_arrays(params: AttentionParams, prefix: str) -> dict[str, np.ndarray]:
    return {name: t.data for name, t in params.parameters(prefix).items()}


def attention_from_arrays(arrays, prefix: str, requires_grad: bool = True, ln_eps: float = 1e-5) -> AttentionParams:
    try:
        return AttentionParams(**{name: Tensor(arrays[f"{prefix}.{name}"], requires_grad=requires_grad)
                                  for name in AttentionParams.NAMES}, ln_eps=ln_eps)
    except KeyError as e:
        raise ValidationError(f"checkpoint is missing {e.args[0]}") from e


def _marginal(given, n: int, name: str) -> np.ndarray:
    if given is None:
        return np.full(n, 1.0 / n)
    m = np.asarray(given, dtype=np.float64).reshape(-1)
    if m.shape != (n,):
        raise ValidationError(f"{name} marginal has {m.size} entries, expected {n}")
    if np.any(m <= 0) or abs(m.sum() - 1.0) > 1e-9:
        raise ValidationError(f"{name} marginal must be strictly positive and sum to 1")
    return m


def _residuals(plan: np.ndarray, a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    row = float(np.max(np.abs(plan.sum(axis=-1) - a)))
    col = float(np.max(np.abs(plan.sum(axis=-2) - b)))
    return row, col


def sinkhorn_normalize(scores, epsilon: float, iterations: int, row_marginal=None, col_marginal=None) -> TransportPlan:
    """Log-domain Sinkhorn on the kernel exp(scores / epsilon).

    Alternates row then column scaling toward the marginals; the plan is
    differentiable through the unrolled iterations.
    """
    scores = tc.as_tensor(scores)
    if not (epsilon > 0):
        raise ValidationError(f"epsilon must be positive, got {epsilon}")
    if int(iterations) < 1:
        raise ValidationError(f"iterations must be >= 1, got {iterations}")
    if scores.ndim not in (2, 3):
        raise DimensionError(f"scores must be [L, P] or [B, L, P], got {scores.shape}")
    if not np.all(np.isfinite(scores.data)):
        raise NumericError("sinkhorn_normalize: non-finite scores")
    L, P = scores.shape[-2:]
    a = _marginal(row_marginal, L, "row")
    b = _marginal(col_marginal, P, "column")
    lead = scores.shape[:-2]
    log_a = Tensor(np.broadcast_to(np.log(a).reshape(L, 1), lead + (L, 1)))
    log_b = Tensor(np.broadcast_to(np.log(b).reshape(1, P), lead + (1, P)))

    log_k = tc.mul(scores, 1.0 / epsilon)
    f = tc.zeros(lead + (L, 1))
    g = tc.zeros(lead + (1, P))
    history = []
    for _ in range(int(iterations)):
        f = tc.sub(log_a, tc.logsumexp(tc.add(log_k, tc.broadcast_to(g, scores.shape)), axis=-1, keepdims=True))
        g = tc.sub(log_b, tc.logsumexp(tc.add(log_k, tc.broadcast_to(f, scores.shape)), axis=-2, keepdims=True))
        current = np.exp(log_k.data + f.data + g.data)
        history.append(_residuals(current, a, b))
    plan = tc.exp(tc.add(tc.add(log_k, tc.broadcast_to(f, scores.shape)), tc.broadcast_to(g, scores.shape)))
    row_res, col_res = _residuals(plan.data, a, b)
    return TransportPlan(plan=plan, epsilon=float(epsilon), iterations=int(iterations),
                         row_residual=row_res, col_residual=col_res, residual_history=tuple(history))


def attention_map(scores, mode: str = "mpsa", ot_config: OTConfig | None = None) -> Tensor:
    """Row-normalised attention weights [.., L, P] from raw query-key scores."""
    scores = tc.as_tensor(scores)
    if mode == "softmax":
        return tc.softmax_rows(scores)
    if mode != "mpsa":
        raise ValidationError(f"unknown attention mode '{mode}' (choose from {', '.join(ATTENTION_MODES)})")
    ot_config = ot_config or OTConfig()
    transport = sinkhorn_normalize(scores, ot_config.epsilon, ot_config.iterations,
                                   ot_config.row_marginal, ot_config.col_marginal)
    L = scores.shape[-2]
    a = _marginal(ot_config.row_marginal, L, "row").reshape(L, 1)
    row_mass = Tensor(np.broadcast_to(a, scores.shape))
    return tc.div(transport.plan, row_mass)


def _attend(F_v, F_t, params: AttentionParams, mode: str, ot_config: OTConfig | None):
    F_v, F_t = tc.as_tensor(F_v), tc.as_tensor(F_t)
    if F_v.ndim not in (2, 3) or F_v.ndim != F_t.ndim:
        raise DimensionError(f"visual {F_v.shape} and prompt {F_t.shape} features need matching rank 2 or 3")
    if F_v.shape[-1] != params.d_v or F_t.shape[-1] != params.d_t:
        raise DimensionError(f"feature widths {F_v.shape[-1]}/{F_t.shape[-1]} do not match params "
                             f"d_v={params.d_v}, d_t={params.d_t}")
    if F_v.ndim == 3 and F_v.shape[0] != F_t.shape[0]:
        raise DimensionError(f"batch sizes differ: {F_v.shape[0]} vs {F_t.shape[0]}")
    Q = tc.matmul(F_v, params.W_q)
    K = tc.matmul(F_t, params.W_k)
    V = tc.matmul(F_t, params.W_v)
    scores = tc.mul(tc.matmul(Q, tc.transpose(K)), 1.0 / math.sqrt(params.d_a))
    weights = attention_map(scores, mode, ot_config)
    return tc.matmul(weights, V), weights


def mpsa_attention(F_v, F_t, params: AttentionParams, ot_config: OTConfig | None = None):
    """Multi-prompt Sinkhorn attention: returns (fused [.., L, d_a], map [.., L, P])."""
    return _attend(F_v, F_t, params, "mpsa", ot_config)


def softmax_cross_attention(F_v, F_t, params: AttentionParams):
    """Standard cross-attention with a row softmax in place of Sinkhorn."""
    return _attend(F_v, F_t, params, "softmax", None)


def cross_attention(F_v, F_t, params: AttentionParams, mode: str, ot_config: OTConfig | None = None):
    if mode == "mpsa":
        return mpsa_attention(F_v, F_t, params, ot_config)
    if mode == "softmax":
        return softmax_cross_attention(F_v, F_t, params)
    raise ValidationError(f"unknown attention mode '{mode}' (choose from {', '.join(ATTENTION_MODES)})")


def fuse_residual(attended, F_v, params: AttentionParams) -> Tensor:
    """f_proj(LayerNorm(attended . W_proj + F_v)); output width d_v."""
    attended, F_v = tc.as_tensor(attended), tc.as_tensor(F_v)
    if attended.shape[-1] != params.d_a or F_v.shape[-1] != params.d_v or attended.shape[:-1] != F_v.shape[:-1]:
        raise DimensionError(f"cannot fuse attended {attended.shape} with visual {F_v.shape} "
                             f"(d_a={params.d_a}, d_v={params.d_v})")
    residual = tc.add(tc.matmul(attended, params.W_proj), F_v)
    normed = tc.layer_norm(residual, params.ln_gain, params.ln_bias, params.ln_eps)
    out = tc.matmul(normed, params.W_out)
    return tc.add(out, tc.broadcast_to(params.b_out, out.shape))


def fuse_concat(F_c_g, F_c_l) -> Tensor:
    """Feature-axis concatenation, global block first."""
    F_c_g, F_c_l = tc.as_tensor(F_c_g), tc.as_tensor(F_c_l)
    if F_c_g.shape[:-1] != F_c_l.shape[:-1]:
        raise DimensionError(f"global {F_c_g.shape} and local {F_c_l.shape} features disagree on positions")
    return tc.concat([F_c_g, F_c_l], axis=-1)
