"""Crowd Transformer Network: local block, non-local block with contextual
multi-head attention, and the density prediction head."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import autograd as ag
from .autograd import ContractViolation, Tensor

VARIANTS = ("full-ctn", "local-only", "nonlocal-only", "standard-mha")
VARIANT_ALIASES = {
    "full": "full-ctn",
    "local": "local-only",
    "nonlocal": "nonlocal-only",
    "mha": "standard-mha",
}


def canonical_variant(name: str) -> str:
    name = VARIANT_ALIASES.get(name, name)
    if name not in VARIANTS:
        raise ContractViolation(f"unknown variant {name!r}; choose from {VARIANTS + tuple(VARIANT_ALIASES)}")
    return name


@dataclass(frozen=True)
class AttentionConfig:
    """Width ``d`` split across ``h`` heads of width ``d_k``; projections see ``2m`` neighbours."""

    d: int = 240
    h: int = 12
    m: int = 1
    d_k: int | None = None
    scale_scores: bool = False

    def __post_init__(self):
        if self.d < 1 or self.h < 1:
            raise ContractViolation(f"attention width and head count must be positive (d={self.d}, h={self.h})")
        if self.d_k is None:
            if self.d % self.h:
                raise ContractViolation(f"h={self.h} heads do not divide d={self.d}")
            object.__setattr__(self, "d_k", self.d // self.h)
        elif self.h * self.d_k != self.d:
            raise ContractViolation(f"h*d_k must equal d, got {self.h}*{self.d_k} != {self.d}")
        if self.m < 0:
            raise ContractViolation(f"context half-width m must be >= 0, got {self.m}")

    @property
    def kernel_size(self) -> int:
        return 2 * self.m + 1


@dataclass(frozen=True)
class ModelConfig:
    height: int = 384
    width: int = 384
    in_channels: int = 3
    local_filters: tuple[int, ...] = (64, 64, 128, 128, 256)
    local_pools_after: tuple[int, ...] = (2, 4)
    nonlocal_filters: tuple[int, ...] = (256, 256, 512)
    nonlocal_pool_after: int = 2
    attention: AttentionConfig = field(default_factory=AttentionConfig)
    attention_layers: int = 3
    head_filters: tuple[int, ...] = (196, 128, 48, 1)
    head_upsample_after: tuple[int, ...] = (2, 3)
    variant: str = "full-ctn"
    init_std: float = 0.001
    # "he": convs that would carry pretrained VGG weights get He-normal init,
    # everything else N(0, init_std); "gaussian": N(0, init_std) everywhere
    init_scheme: str = "he"

    def __post_init__(self):
        object.__setattr__(self, "variant", canonical_variant(self.variant))
        for name in ("local_filters", "local_pools_after", "nonlocal_filters", "head_filters", "head_upsample_after"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        if self.height % 8 or self.width % 8 or self.height < 8 or self.width < 8:
            raise ContractViolation(f"input size must be a positive multiple of 8, got {self.height}x{self.width}")
        if len(self.local_pools_after) != 2 or not all(1 <= p <= len(self.local_filters) for p in self.local_pools_after):
            raise ContractViolation("local block needs exactly two pools placed after existing convs")
        if not 1 <= self.nonlocal_pool_after <= len(self.nonlocal_filters):
            raise ContractViolation("non-local pool must follow one of its convs")
        if len(self.head_upsample_after) != 2 or not all(1 <= p < len(self.head_filters) for p in self.head_upsample_after):
            raise ContractViolation("head needs exactly two upsampling layers before its last conv")
        if self.head_filters[-1] != 1:
            raise ContractViolation("the last head conv must produce a single density channel")
        if self.attention_layers < 0:
            raise ContractViolation("attention_layers must be >= 0")
        if self.init_scheme not in ("he", "gaussian"):
            raise ContractViolation(f"unknown init_scheme {self.init_scheme!r}")

    @property
    def effective_attention(self) -> AttentionConfig:
        if self.variant == "standard-mha":
            return replace(self.attention, m=0)
        return self.attention

    def to_dict(self) -> dict:
        out = asdict(self)
        for key, value in out.items():
            if isinstance(value, tuple):
                out[key] = list(value)
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> ModelConfig:
        raw = dict(raw)
        raw["attention"] = AttentionConfig(**raw.get("attention", {}))
        return cls(**raw)


# ---------------------------------------------------------------- attention

def attention_head(xq: Tensor, xk: Tensor, xv: Tensor, scale_scores: bool = False) -> Tensor:
    """softmax(X_Q X_K^T) X_V, optionally with 1/sqrt(d_k) scaling of the scores."""
    if not (xq.shape == xk.shape and xq.shape[0] == xv.shape[0]):
        raise ContractViolation(f"attention_head: shapes {xq.shape}, {xk.shape}, {xv.shape} disagree")
    scores = ag.matmul(xq, ag.transpose(xk))
    if scale_scores:
        scores = ag.scale(scores, 1.0 / math.sqrt(xq.shape[1]))
    return ag.matmul(ag.softmax_rows(scores), xv)


def cmha_layer(x: Tensor, params: dict[str, Tensor], cfg: AttentionConfig) -> Tensor:
    """Contextual multi-head attention over an (n, d) sequence.

    ``params`` holds ``q``/``k``/``v``/``out`` conv1d weights of shape
    (d, d, 2m+1) and biases of shape (d,); head ``j`` owns output channels
    ``j*d_k .. (j+1)*d_k`` of the q/k/v projections.
    """
    if x.ndim != 2 or x.shape[1] != cfg.d:
        raise ContractViolation(f"cmha_layer: expected (n, {cfg.d}) input, got {x.shape}")
    q = ag.conv1d(x, params["q.weight"], params["q.bias"])
    k = ag.conv1d(x, params["k.weight"], params["k.bias"])
    v = ag.conv1d(x, params["v.weight"], params["v.bias"])
    heads = []
    for j in range(cfg.h):
        lo, hi = j * cfg.d_k, (j + 1) * cfg.d_k
        heads.append(attention_head(ag.slice_cols(q, lo, hi), ag.slice_cols(k, lo, hi),
                                    ag.slice_cols(v, lo, hi), cfg.scale_scores))
    z = heads[0] if cfg.h == 1 else ag.concat_cols(heads)
    return ag.conv1d(z, params["out.weight"], params["out.bias"])


def mse_density_loss(pred: Tensor, target: Tensor) -> Tensor:
    return ag.mse(pred, target)


# ---------------------------------------------------------------- network

def _is_backbone(name: str) -> bool:
    """VGG-16 positions: the local convs and the 3x3 convs of the non-local block."""
    return name.startswith("local.conv") or name.startswith("nonlocal.conv")


class CTN:
    """Parameters plus forward pass for one :class:`ModelConfig`."""

    def __init__(self, cfg: ModelConfig, seed: int = 0, params: dict[str, np.ndarray] | None = None):
        self.cfg = cfg
        self.params: dict[str, Tensor] = {}
        rng = np.random.default_rng(seed)
        for name, shape in self._plan():
            if params is not None:
                if name not in params:
                    raise ContractViolation(f"missing parameter {name}")
                arr = np.asarray(params[name], dtype=np.float64)
                if arr.shape != shape:
                    raise ContractViolation(f"parameter {name}: shape {arr.shape} != expected {shape}")
                arr = arr.copy()
            elif name.endswith(".bias"):
                arr = np.zeros(shape)
            elif cfg.init_scheme == "he" and _is_backbone(name):
                arr = rng.normal(0.0, math.sqrt(2.0 / np.prod(shape[1:])), size=shape)
            else:
                arr = rng.normal(0.0, cfg.init_std, size=shape)
            self.params[name] = Tensor(arr, requires_grad=True, name=name)
        if params is not None:
            extra = set(params) - set(self.params)
            if extra:
                raise ContractViolation(f"unexpected parameters {sorted(extra)}")

    @property
    def uses_local(self) -> bool:
        return self.cfg.variant != "nonlocal-only"

    @property
    def uses_nonlocal(self) -> bool:
        return self.cfg.variant != "local-only"

    def _plan(self) -> list[tuple[str, tuple[int, ...]]]:
        cfg = self.cfg
        plan = []

        def conv(name, c_out, c_in, k):
            plan.append((f"{name}.weight", (c_out, c_in, k, k)))
            plan.append((f"{name}.bias", (c_out,)))

        c = cfg.in_channels
        for i, f in enumerate(cfg.local_filters, 1):
            conv(f"local.conv{i}", f, c, 3)
            c = f
        local_c = c
        head_in = 0
        if self.uses_nonlocal:
            att = cfg.effective_attention
            for i, f in enumerate(cfg.nonlocal_filters, 1):
                conv(f"nonlocal.conv{i}", f, c, 3)
                c = f
            conv("nonlocal.reduce", att.d, c, 1)
            kk = att.kernel_size
            for layer in range(cfg.attention_layers):
                for proj in ("q", "k", "v", "out"):
                    plan.append((f"attn{layer}.{proj}.weight", (att.d, att.d, kk)))
                    plan.append((f"attn{layer}.{proj}.bias", (att.d,)))
            head_in += att.d
        if self.uses_local:
            head_in += local_c
        c = head_in
        n_head = len(cfg.head_filters)
        for i, f in enumerate(cfg.head_filters, 1):
            conv(f"head.conv{i}", f, c, 1 if i == n_head else 3)
            c = f
        return plan

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def _conv(self, x: Tensor, name: str, pad: int = 1) -> Tensor:
        return ag.conv2d(x, self.params[f"{name}.weight"], self.params[f"{name}.bias"], 1, pad)

    def attention_params(self, layer: int) -> dict[str, Tensor]:
        prefix = f"attn{layer}."
        return {k[len(prefix):]: v for k, v in self.params.items() if k.startswith(prefix)}

    # blocks

    def local_feature_block(self, image: Tensor) -> Tensor:
        if image.ndim != 3 or image.shape[0] != self.cfg.in_channels:
            raise ContractViolation(f"local block: expected ({self.cfg.in_channels}, H, W) image, got {image.shape}")
        if image.shape[1] % 4 or image.shape[2] % 4:
            raise ContractViolation(f"local block: H and W must be divisible by 4, got {image.shape[1:]}")
        x = image
        for i in range(1, len(self.cfg.local_filters) + 1):
            x = ag.relu(self._conv(x, f"local.conv{i}"))
            if i in self.cfg.local_pools_after:
                x = ag.maxpool2d(x)
        return x

    def non_local_feature_block(self, local: Tensor, attention: bool = True) -> Tensor:
        """Conv stack, flatten to an (M, d) sequence, attention layers, unflatten."""
        if local.shape[1] % 2 or local.shape[2] % 2:
            raise ContractViolation(f"non-local block: spatial dims must be even, got {local.shape[1:]}")
        x = local
        for i in range(1, len(self.cfg.nonlocal_filters) + 1):
            x = ag.relu(self._conv(x, f"nonlocal.conv{i}"))
            if i == self.cfg.nonlocal_pool_after:
                x = ag.maxpool2d(x)
        x = ag.relu(self._conv(x, "nonlocal.reduce", pad=0))
        d, h8, w8 = x.shape
        seq = ag.transpose(ag.reshape(x, (d, h8 * w8)))  # row-major over (h8, w8)
        if attention:
            att = self.cfg.effective_attention
            for layer in range(self.cfg.attention_layers):
                seq = cmha_layer(seq, self.attention_params(layer), att)
        return ag.reshape(ag.transpose(seq), (d, h8, w8))

    def density_head(self, local: Tensor | None, nonlocal_: Tensor | None) -> Tensor:
        parts = []
        if local is not None:
            parts.append(local)
        if nonlocal_ is not None:
            parts.append(ag.bilinear_upsample2x(nonlocal_))
        if not parts:
            raise ContractViolation("density head needs local or non-local features")
        spatial = parts[0].shape[1:]
        for p in parts:
            if p.shape[1:] != spatial:
                raise ContractViolation(f"density head: spatial mismatch {p.shape[1:]} vs {spatial}")
        x = parts[0] if len(parts) == 1 else ag.concat_channels(parts)
        n_head = len(self.cfg.head_filters)
        for i in range(1, n_head + 1):
            x = ag.relu(self._conv(x, f"head.conv{i}", pad=0 if i == n_head else 1))
            if i in self.cfg.head_upsample_after:
                x = ag.bilinear_upsample2x(x)
        return ag.reshape(x, x.shape[1:])

    def forward(self, image: Tensor) -> Tensor:
        """Map a (C, H, W) image to an (H, W) nonnegative density map."""
        if image.ndim != 3 or image.shape[1] % 8 or image.shape[2] % 8:
            raise ContractViolation(f"forward: H and W must be multiples of 8, got {image.shape}")
        local = self.local_feature_block(image)
        nonlocal_ = self.non_local_feature_block(local) if self.uses_nonlocal else None
        return self.density_head(local if self.uses_local else None, nonlocal_)

    __call__ = forward

    def predict(self, image: Tensor | np.ndarray) -> np.ndarray:
        if not isinstance(image, Tensor):
            image = Tensor(image)
        with ag.no_grad():
            return self.forward(image).data


def ctn_forward(image: Tensor, model: CTN) -> Tensor:
    return model.forward(image)
