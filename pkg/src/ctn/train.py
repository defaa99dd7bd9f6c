"""Crop-based training and tiled evaluation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autograd as ag
from . import checkpoint
from .autograd import Tensor
from .config import RunConfig
from .data import Sample, crop_offsets, normalize, pad_to_fit, tile_predict
from .metrics import EvalRecord
from .model import CTN, ModelConfig, mse_density_loss
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)


@dataclass
class TrainResult:
    model: CTN
    losses: list[float] = field(default_factory=list)

    def loss_csv(self) -> str:
        rows = ["iteration,loss"] + [f"{i},{loss!r}" for i, loss in enumerate(self.losses, 1)]
        return "\n".join(rows) + "\n"


def crop_schedule(samples: Sequence[Sample], crop: int, per_image: int, epochs: int, seed: int):
    """Yield (sample index, top, left) in training order; fixed by ``seed`` alone."""
    offsets = []
    for idx, s in enumerate(samples):
        h, w = max(crop, s.image.shape[1]), max(crop, s.image.shape[2])
        sub = int(np.random.SeedSequence([seed, idx]).generate_state(1)[0])
        offsets.extend((idx, t, l) for t, l in crop_offsets(h, w, crop, per_image, sub))
    for epoch in range(epochs):
        order = np.random.default_rng([seed, 10_000 + epoch]).permutation(len(offsets))
        for j in order:
            yield offsets[j]


def train(
    samples: Sequence[Sample],
    run: RunConfig,
    model_cfg: ModelConfig | None = None,
    on_step: Callable[[int, float], None] | None = None,
) -> TrainResult:
    model_cfg = model_cfg or run.model_config()
    model = CTN(model_cfg, seed=run.seed)
    params = model.parameters()
    state = AdamState.for_params(params, lr=run.lr)

    prepared = []
    for s in samples:
        image, density = pad_to_fit(s.image, s.density, run.crop)
        prepared.append((normalize(image), density))

    result = TrainResult(model)
    batch: list[tuple[int, int, int]] = []

    def step():
        model.zero_grad()
        total = None
        for idx, top, left in batch:
            image, density = prepared[idx]
            x = Tensor(image[:, top:top + run.crop, left:left + run.crop])
            y = Tensor(density[top:top + run.crop, left:left + run.crop])
            loss = mse_density_loss(model(x), y)
            total = loss if total is None else ag.add(total, loss)
        total = ag.scale(total, 1.0 / len(batch))
        total.backward()
        adam_step(params, [p.grad for p in params], state)
        value = total.item()
        result.losses.append(value)
        if on_step:
            on_step(len(result.losses), value)
        log.debug("iter %d loss %.6e", len(result.losses), value)

    for item in crop_schedule(samples, run.crop, run.crops_per_image, run.epochs, run.seed):
        batch.append(item)
        if len(batch) == run.batch:
            step()
            batch = []
            if run.max_iters is not None and len(result.losses) >= run.max_iters:
                return result
    if batch:
        step()
    return result


def evaluate(model: CTN, samples: Sequence[Sample], tile: int) -> list[EvalRecord]:
    records = []
    for s in samples:
        pred = tile_predict(model, normalize(s.image), tile)
        records.append(EvalRecord(s.image_id, s.dots.count, pred.count))
    return records


def save_model(path, model: CTN) -> None:
    checkpoint.save(path, model.state_dict(), model.cfg.to_dict())


def load_model(path) -> CTN:
    config, params = checkpoint.load(path)
    return CTN(ModelConfig.from_dict(config), params=params)
