"""Poincare-ball geometry and the HNN map from entity logits into the ball.

All functions act on the last axis, so a single point ``[d]``, a batch
``[B, d]`` or a pairwise grid ``[B, B, d]`` go through the same code.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

import tensor_core as tc
from errors import DimensionError, DomainError, ValidationError
from tensor_core import Tensor

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BallConfig:
    """Curvature of the ball plus the radii that keep gradients finite."""

    curvature: float = 1.0
    boundary_eps: float = 1e-5
    artanh_clamp: float = 1.0 - 1e-7

    def __post_init__(self):
        if not (self.curvature > 0 and math.isfinite(self.curvature)):
            raise ValidationError(f"curvature must be a positive finite real, got {self.curvature}")
        if not 0 < self.boundary_eps < 1:
            raise ValidationError(f"boundary_eps must lie in (0, 1), got {self.boundary_eps}")
        if not 0 < self.artanh_clamp < 1:
            raise ValidationError(f"artanh_clamp must lie in (0, 1), got {self.artanh_clamp}")

    @property
    def sqrt_c(self) -> float:
        return math.sqrt(self.curvature)

    @property
    def max_norm(self) -> float:
        return (1.0 - self.boundary_eps) / self.sqrt_c


@dataclass(frozen=True)
class BallPoint:
    coords: Tensor
    config: BallConfig = field(default_factory=BallConfig)

    def __post_init__(self):
        check_in_ball(self.coords, self.config.curvature)


@dataclass
class HnnParams:
    """Euclidean affine layer feeding the exponential map at the origin.

    ``input_shift``/``input_scale`` standardise the logits before the affine
    map. They are fitted once on a corpus and never trained; ``None`` means
    the identity.
    """

    weight: Tensor
    bias: Tensor
    config: BallConfig = field(default_factory=BallConfig)
    input_shift: np.ndarray | None = None
    input_scale: np.ndarray | None = None

    def __post_init__(self):
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[1],):
            raise DimensionError(f"HNN weight {self.weight.shape} and bias {self.bias.shape} disagree")
        if not tc.parameters_finite([self.weight, self.bias]):
            raise ValidationError("HNN parameters must be finite")
        if (self.input_shift is None) != (self.input_scale is None):
            raise ValidationError("input_shift and input_scale must be given together")
        if self.input_shift is not None:
            shift = np.array(self.input_shift, dtype=np.float64).reshape(-1)
            scale = np.array(self.input_scale, dtype=np.float64).reshape(-1)
            if shift.shape != (self.d_in,) or scale.shape != (self.d_in,):
                raise DimensionError(f"input standardisation needs {self.d_in} entries, "
                                     f"got {shift.size} shifts and {scale.size} scales")
            if not (np.all(np.isfinite(shift)) and np.all(np.isfinite(scale)) and np.all(scale > 0)):
                raise ValidationError("input standardisation must be finite with positive scales")
            shift.flags.writeable = False
            scale.flags.writeable = False
            self.input_shift, self.input_scale = shift, scale

    @property
    def d_in(self) -> int:
        return self.weight.shape[0]

    @property
    def d_h(self) -> int:
        return self.weight.shape[1]

    @property
    def standardised(self) -> bool:
        return self.input_shift is not None

    def parameters(self) -> dict[str, Tensor]:
        return {"hnn.weight": self.weight, "hnn.bias": self.bias}


def _c(c) -> float:
    c = float(c.curvature if isinstance(c, BallConfig) else c)
    if not c > 0:
        raise ValidationError(f"curvature must be positive, got {c}")
    return c


def check_in_ball(x, c) -> None:
    """Raise DomainError unless every row satisfies sqrt(c)*||x|| < 1."""
    data = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    scaled = math.sqrt(_c(c)) * np.sqrt((data * data).sum(axis=-1))
    bad = ~(scaled < 1.0)
    if np.any(bad):
        idx = tuple(int(i) for i in np.argwhere(np.atleast_1d(bad))[0])
        raise DomainError(f"point {idx} lies outside the ball: sqrt(c)*||x|| = {float(np.atleast_1d(scaled)[idx])}")


def _dot(x: Tensor, y: Tensor) -> Tensor:
    return tc.reduce("sum", tc.mul(x, y), axis=-1, keepdims=True)


def _spread(t: Tensor, like: Tensor) -> Tensor:
    return tc.broadcast_to(t, like.shape)


def project_to_ball(v, config: BallConfig | None = None) -> Tensor:
    """Rescale rows whose norm reaches max_norm back onto the max_norm sphere."""
    config = config or BallConfig()
    v = tc.as_tensor(v)
    norm = tc.safe_norm(v)
    scale = tc.minimum(tc.ones(norm.shape), tc.div(config.max_norm, norm))
    return tc.mul(v, _spread(scale, v))


def _pull_inside(v: Tensor, config: BallConfig) -> Tensor:
    """Move rows that round onto or past the radius 1/sqrt(c) back to max_norm; other rows pass through."""
    norm = tc.safe_norm(v)
    outside = norm.data * config.sqrt_c >= 1.0
    if not np.any(outside):
        return v
    shrink = tc.sub(tc.div(config.max_norm, norm), 1.0)
    scale = tc.add(1.0, tc.mul(Tensor(outside.astype(np.float64)), shrink))
    return tc.mul(v, _spread(scale, v))


def mobius_add(x, y, c=1.0, config: BallConfig | None = None) -> Tensor:
    """Gyro-vector addition x (+)_c y, evaluated row by row."""
    c = _c(c)
    config = config or BallConfig(curvature=c)
    x, y = tc.as_tensor(x), tc.as_tensor(y)
    if x.shape != y.shape:
        raise DimensionError(f"mobius_add operands differ in shape: {x.shape} vs {y.shape}")
    check_in_ball(x, c)
    check_in_ball(y, c)
    xy = _dot(x, y)
    x2 = _dot(x, x)
    y2 = _dot(y, y)
    coef_x = 1.0 + 2.0 * c * xy + c * y2
    coef_y = 1.0 - c * x2
    denom = 1.0 + 2.0 * c * xy + (c * c) * x2 * y2
    num = _spread(coef_x, x) * x + _spread(coef_y, y) * y
    return _pull_inside(num / _spread(denom, num), config)


def geodesic_distance(x, y, c=1.0, config: BallConfig | None = None) -> Tensor:
    """Poincare distance (2/sqrt c) * artanh(sqrt c * ||(-x) (+)_c y||), one value per row."""
    c = _c(c)
    config = config or BallConfig(curvature=c)
    x, y = tc.as_tensor(x), tc.as_tensor(y)
    diff = mobius_add(tc.neg(x), y, c, config)
    arg = tc.mul(math.sqrt(c), tc.safe_norm(diff, keepdims=False))
    arg = tc.minimum(arg, tc.Tensor(np.full(arg.shape, config.artanh_clamp)))
    return tc.mul(2.0 / math.sqrt(c), tc.artanh(arg))


def expmap_origin(v, c=1.0, config: BallConfig | None = None) -> Tensor:
    """exp_0(v) = tanh(sqrt c ||v||) v / (sqrt c ||v||); v = 0 maps to the origin."""
    c = _c(c)
    config = config or BallConfig(curvature=c)
    v = tc.as_tensor(v)
    scaled = tc.mul(math.sqrt(c), tc.safe_norm(v))
    gain = tc.div(tc.tanh(scaled), scaled)
    return project_to_ball(tc.mul(v, _spread(gain, v)), config)


def logmap_origin(x, c=1.0, config: BallConfig | None = None) -> Tensor:
    """Inverse of :func:`expmap_origin` for points inside the ball."""
    c = _c(c)
    config = config or BallConfig(curvature=c)
    x = tc.as_tensor(x)
    check_in_ball(x, c)
    scaled = tc.mul(math.sqrt(c), tc.safe_norm(x))
    scaled = tc.minimum(scaled, tc.Tensor(np.full(scaled.shape, config.artanh_clamp)))
    gain = tc.div(tc.artanh(scaled), scaled)
    return tc.mul(x, _spread(gain, x))


def hnn_affine(logits, params: HnnParams) -> Tensor:
    """Euclidean half of the HNN: standardise(logits) . W + b."""
    logits = tc.as_tensor(logits)
    if logits.ndim != 2 or logits.shape[1] != params.d_in:
        raise DimensionError(f"logits {logits.shape} do not match HNN input width {params.d_in}")
    if params.standardised:
        shift = Tensor(np.broadcast_to(params.input_shift, logits.shape))
        scale = Tensor(np.broadcast_to(params.input_scale, logits.shape))
        logits = tc.div(tc.sub(logits, shift), scale)
    z = tc.matmul(logits, params.weight)
    return tc.add(z, tc.broadcast_to(params.bias, z.shape))


def hnn_embed(logits, params: HnnParams) -> Tensor:
    """H = project(exp_0(logits . W + b)), one ball point per row."""
    config = params.config
    return project_to_ball(expmap_origin(hnn_affine(logits, params), config.curvature, config), config)


def init_hnn(d_in: int, d_h: int, config: BallConfig | None = None, seed: int = 0) -> HnnParams:
    """Fan-in uniform weights in [-1/sqrt(d_in), 1/sqrt(d_in)], zero bias."""
    if d_in <= 0 or d_h <= 0:
        raise ValidationError(f"HNN widths must be positive, got d_in={d_in}, d_h={d_h}")
    rng = np.random.Generator(np.random.PCG64(seed))
    bound = 1.0 / math.sqrt(d_in)
    return HnnParams(
        weight=Tensor(rng.uniform(-bound, bound, size=(d_in, d_h)), requires_grad=True),
        bias=Tensor(np.zeros(d_h), requires_grad=True),
        config=config or BallConfig(),
    )


def fit_input_standardisation(params: HnnParams, logits, min_scale: float = 1e-6) -> HnnParams:
    """Same weights, with the per-feature mean/std of ``logits`` [N, d_in] as input standardisation."""
    data = np.asarray(logits.data if isinstance(logits, Tensor) else logits, dtype=np.float64)
    if data.ndim != 2 or data.shape[1] != params.d_in:
        raise DimensionError(f"logits {data.shape} do not match HNN input width {params.d_in}")
    if data.shape[0] < 2:
        raise ValidationError("input standardisation needs at least two rows")
    scale = np.maximum(data.std(axis=0), min_scale)
    return replace(params, input_shift=data.mean(axis=0), input_scale=scale)


def hnn_to_arrays(params: HnnParams) -> dict[str, np.ndarray]:
    arrays = {
        "hnn.weight": params.weight.data,
        "hnn.bias": params.bias.data,
        "hnn.curvature": np.array(params.config.curvature),
    }
    if params.standardised:
        arrays["hnn.input_shift"] = params.input_shift
        arrays["hnn.input_scale"] = params.input_scale
    return arrays


def hnn_from_arrays(arrays, requires_grad: bool = True, config: BallConfig | None = None) -> HnnParams:
    try:
        curvature = float(np.asarray(arrays["hnn.curvature"]).reshape(()))
        weight, bias = arrays["hnn.weight"], arrays["hnn.bias"]
    except KeyError as e:
        raise ValidationError(f"checkpoint is missing {e.args[0]}") from e
    if config is not None and config.curvature != curvature:
        raise ValidationError(f"checkpoint curvature {curvature} disagrees with ball config {config.curvature}")
    return HnnParams(weight=Tensor(weight, requires_grad=requires_grad),
                     bias=Tensor(bias, requires_grad=requires_grad),
                     config=config or BallConfig(curvature=curvature),
                     input_shift=arrays.get("hnn.input_shift"), input_scale=arrays.get("hnn.input_scale"))
