"""SGD training loop with gradient accumulation.

One step is one optimizer update over batch_size single-scene graphs;
gradients accumulate across the batch and are averaged in the update.
The learning rate drops tenfold at 2/3 and again at 8/9 of the step
budget. A non-finite loss aborts the run after writing the parameters
from before the offending update. Given the same model seed, dataset
seed, and options, a run reproduces bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .checkpoint import save_checkpoint
from .diffcore import backward
from .losses import LossWeights, NonPositiveRadius, total_loss
from .network import Model
from .synth import SceneConfig, SyntheticScene, scene_for_index
from .targets import TargetSet, assign_targets, hbb_target_map


class Divergence(RuntimeError):
    """Raised when the loss stops being finite."""


@dataclass(frozen=True)
class TrainOptions:
    steps: int = 600
    batch_size: int = 8
    lr: float = 0.02
    momentum: float = 0.9
    weight_decay: float = 1e-4
    grad_clip: float = 10.0
    warmup_steps: int = 30
    with_hbb: bool = False
    log_every: int = 20


@dataclass
class TrainResult:
    history: list[dict] = field(default_factory=list)
    diverged: bool = False
    steps_done: int = 0


class Dataset:
    """Fixed pool of generated scenes with lazily cached targets."""

    def __init__(self, scene_cfg: SceneConfig, seed: int, count: int):
        if count < 1:
            raise ValueError("need at least one scene")
        self.scenes: list[SyntheticScene] = [
            scene_for_index(scene_cfg, seed, i) for i in range(count)]
        self._targets: list[TargetSet | None] = [None] * count
        self._hbb: list[np.ndarray | None] = [None] * count
        self._shapes = None
        self._strides = None

    def __len__(self):
        return len(self.scenes)

    def targets_for(self, index: int, level_shapes, strides,
                    num_rays: int) -> TargetSet:
        if self._shapes is None:
            self._shapes, self._strides = level_shapes, strides
        cached = self._targets[index]
        if cached is None:
            cached = assign_targets(self.scenes[index], level_shapes,
                                    strides, num_rays)
            self._targets[index] = cached
        return cached

    def hbb_for(self, index: int, stride: int, shape) -> np.ndarray:
        cached = self._hbb[index]
        if cached is None:
            cached = hbb_target_map(self.scenes[index], stride, shape)
            self._hbb[index] = cached
        return cached


def lr_at(step: int, total: int, base: float, warmup: int = 0) -> float:
    if warmup > 0 and step < warmup:
        return base * (0.25 + 0.75 * step / warmup)
    if step >= (8 * total) // 9:
        return base * 0.01
    if step >= (2 * total) // 3:
        return base * 0.1
    return base


class SGD:
    def __init__(self, model: Model, momentum: float, weight_decay: float):
        self.model = model
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {name: np.zeros_like(p.data)
                         for name, p in model.params.items()}

    def step(self, lr: float, grad_scale: float, grad_clip: float = 0.0) -> None:
        if grad_clip > 0.0:
            sq = 0.0
            for p in self.model.params.values():
                if p.grad is not None:
                    sq += float((p.grad * p.grad).sum())
            norm = np.sqrt(sq) * grad_scale
            if norm > grad_clip:
                grad_scale *= grad_clip / norm
        for name, p in self.model.params.items():
            if p.grad is None:
                continue
            g = p.grad * grad_scale + self.weight_decay * p.data
            v = self.velocity[name]
            v *= self.momentum
            v += g
            # keep 0-d parameters ndarrays; their arithmetic yields scalars
            p.data = np.asarray(p.data - lr * v)
        self.model.zero_grads()


def scene_loss(model: Model, scene: SyntheticScene, targets: TargetSet,
               weights: LossWeights, hbb_target: np.ndarray | None = None):
    """Forward one scene and assemble its loss breakdown."""
    with_hbb = hbb_target is not None
    out = model.forward(scene.image, with_hbb=with_hbb)
    pos = targets.pos_indices
    if pos.size:
        coarse = dc.take_columns(dc.transpose2d(out.coarse), pos)
        coarse = dc.transpose2d(coarse)
        fine = None
        if out.fine is not None:
            fine = dc.transpose2d(dc.take_columns(dc.transpose2d(out.fine), pos))
        total = out.cnt_flat.data.size
        cnt_pos = dc.reshape(dc.take_columns(dc.reshape(out.cnt_flat, (1, total)),
                                             pos), (pos.size,))
        cnt_targets = targets.centerness[pos]
    else:
        coarse = fine = cnt_pos = None
        cnt_targets = np.zeros(0)
    hbb_logits = None
    if with_hbb:
        h, w = out.level_shapes[0]
        hbb_logits = dc.reshape(out.hbb, (h, w))
    return out, total_loss(
        out.cls_flat, targets.classes, cnt_pos, cnt_targets,
        coarse, fine, targets.radii, hbb_logits, hbb_target, weights)


def train(model: Model, dataset: Dataset, weights: LossWeights,
          opts: TrainOptions, ckpt_path: str | None = None,
          log_fn=None) -> TrainResult:
    optimizer = SGD(model, opts.momentum, opts.weight_decay)
    result = TrainResult()
    scene_cursor = 0
    shapes = strides = None
    model.zero_grads()
    last_good = model.state_arrays()

    def abort(step, why):
        if ckpt_path is not None:
            save_checkpoint(ckpt_path, last_good)
        result.diverged = True
        result.steps_done = step
        return Divergence(f"{why} at step {step}")

    for step in range(opts.steps):
        sums = {"cls": 0.0, "cnt": 0.0, "coarse": 0.0, "fine": 0.0,
                "hbb": 0.0, "total": 0.0}
        for _ in range(opts.batch_size):
            idx = scene_cursor % len(dataset)
            scene_cursor += 1
            scene = dataset.scenes[idx]
            if shapes is None:
                probe = model.forward(scene.image)
                shapes, strides = probe.level_shapes, probe.strides
            tgt = dataset.targets_for(idx, shapes, strides, model.config.num_rays)
            hbb_t = None
            if opts.with_hbb:
                s0 = strides[0]
                hbb_t = dataset.hbb_for(idx, s0, shapes[0])
            try:
                _, breakdown = scene_loss(model, scene, tgt, weights, hbb_t)
            except NonPositiveRadius as exc:
                # exp underflow in the radius head; same pathology as a
                # non-finite loss, same clean abort
                raise abort(step, "predicted radii collapsed") from exc
            for key, val in breakdown.as_dict().items():
                sums[key] += val
            backward(breakdown.total_tensor)

        means = {k: v / opts.batch_size for k, v in sums.items()}
        if not all(np.isfinite(v) for v in means.values()):
            raise abort(step, f"non-finite loss {means}")

        last_good = model.state_arrays()
        optimizer.step(lr_at(step, opts.steps, opts.lr, opts.warmup_steps),
                       1.0 / opts.batch_size, opts.grad_clip)
        result.steps_done = step + 1

        if step % opts.log_every == 0 or step == opts.steps - 1:
            line = {"step": step, **{k: round(v, 6) for k, v in means.items()}}
            result.history.append(line)
            if log_fn is not None:
                log_fn(json.dumps(line))

    if ckpt_path is not None:
        save_checkpoint(ckpt_path, model.state_arrays())
    return result
