"""Central finite-difference checks for every differentiable primitive and a small CTN."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .model import CTN, AttentionConfig, ModelConfig, attention_head, cmha_layer

STEP = 1e-5
TOLERANCE = 1e-4


FLOOR = 1e-5  # fraction of the largest gradient norm in the same graph


def rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 0.0) -> float:
    """||a - n|| / max(||a||, ||n||, floor); zero when all three vanish.

    Gradients that are identically zero (e.g. key biases under softmax shift
    invariance) are judged against ``floor`` instead of their own roundoff.
    """
    a, n = np.ravel(analytic), np.ravel(numeric)
    scale = max(np.linalg.norm(a), np.linalg.norm(n), floor)
    return 0.0 if scale == 0.0 else float(np.linalg.norm(a - n) / scale)


def _away_from_zero(rng, shape, gap=0.1):
    x = rng.normal(size=shape)
    return np.where(x >= 0, x + gap, x - gap)


def _conv1d_case(rng, k):
    return lambda x, w, b: ag.conv1d(x, w, b), [rng.normal(size=(5, 3)), rng.normal(size=(4, 3, k)), rng.normal(size=4)]


def _cmha_case(rng):
    cfg = AttentionConfig(d=4, h=2, m=1)
    names = [f"{p}.{t}" for p in ("q", "k", "v", "out") for t in ("weight", "bias")]
    shapes = [(4, 4, 3) if n.endswith("weight") else (4,) for n in names]

    def fn(x, *arrays):
        return cmha_layer(x, dict(zip(names, arrays)), cfg)

    return fn, [rng.normal(size=(5, 4))] + [0.5 * rng.normal(size=s) for s in shapes]


# name -> rng -> (function of Tensors, list of input arrays)
OPS: dict[str, Callable] = {
    "add": lambda r: (ag.add, [r.normal(size=(3, 4)), r.normal(size=(3, 4))]),
    "sub": lambda r: (ag.sub, [r.normal(size=(3, 4)), r.normal(size=(3, 4))]),
    "mul": lambda r: (ag.mul, [r.normal(size=(3, 4)), r.normal(size=(3, 4))]),
    "scale": lambda r: (lambda a: ag.scale(a, -1.7), [r.normal(size=(2, 5))]),
    "relu": lambda r: (ag.relu, [_away_from_zero(r, (4, 5))]),
    "sum": lambda r: (ag.sum, [r.normal(size=(3, 3))]),
    "mean": lambda r: (ag.mean, [r.normal(size=(3, 3))]),
    "mse": lambda r: (ag.mse, [r.normal(size=(4, 4)), r.normal(size=(4, 4))]),
    "reshape": lambda r: (lambda a: ag.reshape(a, (6, 2)), [r.normal(size=(3, 4))]),
    "transpose": lambda r: (ag.transpose, [r.normal(size=(3, 4))]),
    "concat_channels": lambda r: (lambda a, b: ag.concat_channels([a, b]),
                                  [r.normal(size=(2, 3, 3)), r.normal(size=(3, 3, 3))]),
    "concat_cols": lambda r: (lambda a, b: ag.concat_cols([a, b]), [r.normal(size=(4, 2)), r.normal(size=(4, 3))]),
    "slice_cols": lambda r: (lambda a: ag.slice_cols(a, 1, 3), [r.normal(size=(3, 5))]),
    "matmul": lambda r: (ag.matmul, [r.normal(size=(3, 4)), r.normal(size=(4, 2))]),
    "softmax_rows": lambda r: (ag.softmax_rows, [r.normal(size=(3, 5))]),
    "conv2d": lambda r: (lambda x, w, b: ag.conv2d(x, w, b, 1, 1),
                         [r.normal(size=(2, 5, 5)), r.normal(size=(3, 2, 3, 3)), r.normal(size=3)]),
    "conv2d_stride2": lambda r: (lambda x, w, b: ag.conv2d(x, w, b, 2, 1),
                                 [r.normal(size=(2, 5, 5)), r.normal(size=(3, 2, 3, 3)), r.normal(size=3)]),
    "conv2d_1x1": lambda r: (lambda x, w, b: ag.conv2d(x, w, b, 1, 0),
                             [r.normal(size=(3, 4, 4)), r.normal(size=(2, 3, 1, 1)), r.normal(size=2)]),
    "conv1d": lambda r: _conv1d_case(r, 3),
    "conv1d_k5": lambda r: _conv1d_case(r, 5),
    "maxpool2d": lambda r: (ag.maxpool2d, [r.normal(size=(2, 4, 6))]),
    "bilinear_upsample2x": lambda r: (ag.bilinear_upsample2x, [r.normal(size=(2, 3, 4))]),
    "attention_head": lambda r: (attention_head, [r.normal(size=(4, 3)) for _ in range(3)]),
    "cmha_layer": _cmha_case,
}


def _projected_loss(out: Tensor, proj: np.ndarray) -> Tensor:
    return ag.sum(ag.mul(out, Tensor(proj)))


def check_op(name: str, seed: int, step: float = STEP) -> float:
    """Max relative error over the op's inputs for one random instance."""
    rng = np.random.default_rng(seed)
    fn, arrays = OPS[name](rng)
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    out = fn(*tensors)
    proj = rng.normal(size=out.shape)
    _projected_loss(out, proj).backward()

    def loss_at(values):
        with ag.no_grad():
            return float(np.sum(fn(*[Tensor(v) for v in values]).data * proj))

    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]
    floor = FLOOR * max(np.linalg.norm(g) for g in analytic)
    worst = 0.0
    for i, t in enumerate(tensors):
        numeric = np.zeros_like(t.data)
        for idx in np.ndindex(t.shape):
            plus = [a.copy() for a in arrays]
            minus = [a.copy() for a in arrays]
            plus[i][idx] += step
            minus[i][idx] -= step
            numeric[idx] = (loss_at(plus) - loss_at(minus)) / (2 * step)
        worst = max(worst, rel_error(analytic[i], numeric, floor))
    return worst


def gradcheck_model_config(size: int = 32, variant: str = "full-ctn", m: int = 1) -> ModelConfig:
    return ModelConfig(height=size, width=size, variant=variant, attention=AttentionConfig(d=240, h=12, m=m))


def rescaled_model(cfg: ModelConfig, seed: int) -> CTN:
    """A CTN whose weights keep activations O(1), so finite differences are well conditioned."""
    model = CTN(cfg, seed=seed)
    rng = np.random.default_rng(seed + 1)
    for name, p in model.params.items():
        if name.endswith(".bias"):
            p.data[...] = 0.01 * rng.normal(size=p.shape)
            continue
        fan_in = int(np.prod(p.shape[1:]))
        gain = 0.5 if name.startswith("attn") else math.sqrt(2.0)
        p.data[...] = rng.normal(size=p.shape) * gain / math.sqrt(fan_in)
    return model


@dataclass
class ModelCheck:
    name: str
    error: float


def check_model(seed: int, cfg: ModelConfig | None = None, step: float = STEP,
                max_redraws: int = 20) -> list[ModelCheck]:
    """Directional derivative checks: one random unit direction per parameter tensor, plus the image.

    Compares the analytic ``grad . v`` against ``(L(p + hv) - L(p - hv)) / 2h``.
    Directions whose probes flip a ReLU or pooling choice are redrawn.
    """
    cfg = cfg or gradcheck_model_config()
    model = rescaled_model(cfg, seed)
    rng = np.random.default_rng(seed + 2)
    image = Tensor(rng.normal(size=(cfg.in_channels, cfg.height, cfg.width)), requires_grad=True)
    target = Tensor(np.abs(rng.normal(size=(cfg.height, cfg.width))))

    model.zero_grad()
    ag.mse(model(image), target).backward()

    def loss_value():
        with ag.no_grad(), ag.switch_trace() as trace:
            return float(ag.mse(model(image), target).data), trace

    _, base_trace = loss_value()
    grads = {name: (p.grad if p.grad is not None else np.zeros_like(p.data))
             for name, p in [("image", image)] + list(model.params.items())}
    floor = FLOOR * max(np.linalg.norm(g) for g in grads.values())

    checks = []
    for name, p in [("image", image)] + list(model.params.items()):
        base = p.data.copy()
        for _ in range(max_redraws):
            direction = rng.normal(size=p.shape)
            direction /= np.linalg.norm(direction)
            p.data[...] = base + step * direction
            up, up_trace = loss_value()
            p.data[...] = base - step * direction
            down, down_trace = loss_value()
            p.data[...] = base
            # a ReLU or pool switch inside [-h, h] makes the difference quotient meaningless
            if up_trace == base_trace and down_trace == base_trace:
                break
        analytic = float(np.sum(grads[name] * direction))
        numeric = (up - down) / (2 * step)
        checks.append(ModelCheck(name, rel_error(np.array([analytic]), np.array([numeric]), floor)))
    return checks


@dataclass
class Report:
    errors: dict[str, float]
    tolerance: float = TOLERANCE

    @property
    def passed(self) -> bool:
        return all(e < self.tolerance for e in self.errors.values())

    def lines(self) -> list[str]:
        width = max(map(len, self.errors))
        return [f"{'PASS' if e < self.tolerance else 'FAIL'}  {name.ljust(width)}  max rel err {e:.3e}"
                for name, e in self.errors.items()]


def run_suite(seeds=range(5), ops=None, model: bool = True, model_size: int = 32) -> Report:
    """Max relative error per primitive (and per CTN parameter group) across ``seeds``."""
    errors: dict[str, float] = {}
    for name in ops or OPS:
        errors[name] = max(check_op(name, s) for s in seeds)
    if model:
        worst = 0.0
        for s in seeds:
            worst = max(worst, max(c.error for c in check_model(s, gradcheck_model_config(model_size))))
        errors[f"ctn_{model_size}x{model_size}"] = worst
    return Report(errors)
