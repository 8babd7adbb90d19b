# app/services/trainer.py
"""Backpropagation through the unrolled synchronous NCA, optimised with Adam."""
import logging
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from app.core.errors import TrainingDivergedError
from app.core.utils import STREAM_INIT, STREAM_TRAIN, make_rng
from app.models.schemas import TrainConfig, TrainReport
from app.models.tensors import (
    HIDDEN,
    LOGIT_START,
    NUM_CLASSES,
    PARAM_NAMES,
    STATE_SIZE,
    ModelParams,
    ShapeGrid,
    StateGrid,
)
from app.services import nca_core
from app.services.shape_catalog import validate_shape

logger = logging.getLogger(__name__)

CLIP_NORM = 1.0
# taps that carry weights; the perceive fan-in counts only these
LIVE_TAPS = nca_core.TAPS


@dataclass
class Step:
    states_before: np.ndarray
    update_mask: np.ndarray
    cache: nca_core.ForwardCache


@dataclass
class Tape:
    """Everything the backward pass needs from one (possibly batched) rollout."""

    active: np.ndarray
    initial: np.ndarray
    params: ModelParams
    steps: List[Step] = field(default_factory=list)
    final: Optional[np.ndarray] = None

    def replay(self) -> np.ndarray:
        states = self.initial
        for step in self.steps:
            states, _ = nca_core.apply_step(states, self.active, step.update_mask, self.params)
        return states


@dataclass
class AdamMoments:
    m: ModelParams
    v: ModelParams

    @classmethod
    def fresh(cls) -> "AdamMoments":
        return cls(ModelParams.zeros(), ModelParams.zeros())


def one_hot(labels: Union[int, np.ndarray]) -> np.ndarray:
    return np.eye(NUM_CLASSES)[np.asarray(labels)]


def _loss_terms(final: np.ndarray, active: np.ndarray, labels) -> np.ndarray:
    """Per-element squared error summed over active cells."""
    target = one_hot(labels)[..., None, None, :]
    err = (final[..., LOGIT_START:] - target) * active[..., None]
    return np.sum(err * err, axis=(-3, -2, -1))


def loss(final_grid: StateGrid, label: int) -> float:
    return float(_loss_terms(final_grid.states, final_grid.shape.array, label))


def _rollout(initial: np.ndarray, active: np.ndarray, masks: np.ndarray, params: ModelParams) -> Tape:
    tape = Tape(active=active, initial=initial, params=params)
    states = initial
    for update_mask in masks:
        new_states, cache = nca_core.apply_step(states, active, update_mask, params)
        tape.steps.append(Step(states, update_mask, cache))
        states = new_states
    tape.final = states
    return tape


def rollout_with_tape(shape: ShapeGrid, params: ModelParams, t_steps: int, masks) -> Tuple[StateGrid, Tape]:
    """Run ``t_steps`` grid steps under per-step (height, width) masks and record a tape."""
    masks = np.asarray(masks, dtype=bool)
    if t_steps < 1 or len(masks) != t_steps:
        raise ValueError(f"need t_steps >= 1 masks, got t_steps={t_steps} and {len(masks)} masks")
    grid = nca_core.init_grid(shape)
    tape = _rollout(grid.states, shape.array, masks, params)
    return StateGrid(shape, tape.final), tape


def _flat(x: np.ndarray, width: int) -> np.ndarray:
    return x.reshape(-1, width)


def _backward(tape: Tape, labels) -> ModelParams:
    """Gradient of the summed (over batch elements) loss."""
    params = tape.params
    grads = ModelParams.zeros()
    active = tape.active[..., None]
    height, width = tape.active.shape[-2], tape.active.shape[-1]

    g = np.zeros_like(tape.final)
    g[..., LOGIT_START:] = 2.0 * (tape.final[..., LOGIT_START:] - one_hot(labels)[..., None, None, :])
    g = g * active

    for step in reversed(tape.steps):
        c = step.cache
        g_delta = g * (step.update_mask & tape.active)[..., None]
        grads.dmodel_kernel_2 += _flat(c.h2, HIDDEN).T @ _flat(g_delta, STATE_SIZE)
        grads.dmodel_bias_2 += _flat(g_delta, STATE_SIZE).sum(axis=0)

        g_pre2 = (g_delta @ params.dmodel_kernel_2.T) * (c.pre2 > 0)
        grads.dmodel_kernel_1 += _flat(c.h1, HIDDEN).T @ _flat(g_pre2, HIDDEN)
        grads.dmodel_bias_1 += _flat(g_pre2, HIDDEN).sum(axis=0)

        g_pre1 = (g_pre2 @ params.dmodel_kernel_1.T) * (c.pre1 > 0)
        grads.perceive_bias += _flat(g_pre1, HIDDEN).sum(axis=0)
        g_padded = np.zeros_like(c.padded)
        for tap in LIVE_TAPS:
            inputs = nca_core.tap_view(c.padded, tap, height, width)
            grads.perceive_kernel[tap] += _flat(inputs, STATE_SIZE).T @ _flat(g_pre1, HIDDEN)
            nca_core.tap_view(g_padded, tap, height, width)[...] += g_pre1 @ params.perceive_kernel[tap].T

        # residual path plus the path through the neighbourhood; empty cells are constants
        g = (g + g_padded[..., 1 : height + 1, 1 : width + 1, :]) * active

    return grads.clamp_corners()


def gradients(tape: Tape, label) -> ModelParams:
    """Exact gradient of the loss w.r.t. every weight, meaned over any batch dim."""
    grads = _backward(tape, label)
    n = int(np.prod(tape.active.shape[:-2]))
    if n > 1:
        for name in PARAM_NAMES:
            getattr(grads, name)[...] /= n
    return grads


def clip_global_norm(grads: ModelParams, max_norm: float = CLIP_NORM) -> ModelParams:
    norm = float(np.sqrt(sum(np.sum(t * t) for t in grads.as_dict().values())))
    if norm > max_norm:
        for t in grads.as_dict().values():
            t *= max_norm / norm
    return grads


def adam_step(
    params: ModelParams,
    gradient: ModelParams,
    moments: AdamMoments,
    config: TrainConfig,
    iteration: int,
) -> Tuple[ModelParams, AdamMoments]:
    if iteration < 1:
        raise ValueError("Adam iteration index starts at 1")
    b1, b2 = config.beta1, config.beta2
    bc1 = 1.0 - b1**iteration
    bc2 = 1.0 - b2**iteration
    new_params, new_m, new_v = {}, {}, {}
    for name in PARAM_NAMES:
        g = getattr(gradient, name)
        m = b1 * getattr(moments.m, name) + (1.0 - b1) * g
        v = b2 * getattr(moments.v, name) + (1.0 - b2) * (g * g)
        step = config.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + config.epsilon)
        new_params[name] = getattr(params, name) - step
        new_m[name], new_v[name] = m, v
    updated = ModelParams.from_dict(new_params).clamp_corners()
    return updated, AdamMoments(ModelParams.from_dict(new_m), ModelParams.from_dict(new_v))


def init_params(rng_seed: int) -> ModelParams:
    """First two layers ~ N(0, 1/fan_in); last layer and biases zero so the NCA starts as identity."""
    rng = make_rng(rng_seed, STREAM_INIT)
    params = ModelParams.zeros()
    scale = 1.0 / np.sqrt(len(LIVE_TAPS) * STATE_SIZE)
    for tap in LIVE_TAPS:
        params.perceive_kernel[tap] = rng.normal(0.0, scale, size=(STATE_SIZE, HIDDEN))
    params.dmodel_kernel_1 = rng.normal(0.0, 1.0 / np.sqrt(HIDDEN), size=(HIDDEN, HIDDEN))
    return params.float32_rounded().clamp_corners()


def _pad_masks(shapes: Sequence[ShapeGrid]) -> np.ndarray:
    """Stack every shape's mask, anchored at the origin, into the common bounding box."""
    height = max(s.height for s in shapes)
    width = max(s.width for s in shapes)
    out = np.zeros((len(shapes), height, width), dtype=bool)
    for i, s in enumerate(shapes):
        out[i, : s.height, : s.width] = s.array
    return out


def all_cell_accuracy(shape: ShapeGrid, params: ModelParams, n_steps: int) -> float:
    *_, final = nca_core.sync_rollout(shape, params, n_steps)
    predicted = nca_core.classify_grid(final.states)[shape.array]
    return float(np.mean(predicted == shape.label))


def train(config: TrainConfig, shapes: Sequence[ShapeGrid]) -> Tuple[ModelParams, TrainReport]:
    if not shapes:
        raise ValueError("train needs at least one shape")
    for s in shapes:
        validate_shape(s)
    started = time.perf_counter()

    actives = _pad_masks(shapes)
    labels = np.array([s.label for s in shapes])
    rng = make_rng(config.rng_seed, STREAM_TRAIN)
    params = init_params(config.rng_seed)
    moments = AdamMoments.fresh()
    losses: List[float] = []

    for iteration in range(1, config.iterations + 1):
        idx = rng.integers(0, len(shapes), size=config.batch_size)
        t_steps = int(rng.integers(config.t_min, config.t_max + 1))
        active = actives[idx]
        masks = rng.random((t_steps,) + active.shape) < (1.0 - config.drop_rate)

        tape = _rollout(nca_core.init_states(active), active, masks, params)
        batch_loss = float(np.mean(_loss_terms(tape.final, active, labels[idx])))
        if not np.isfinite(batch_loss):
            raise TrainingDivergedError(iteration, batch_loss)

        grads = gradients(tape, labels[idx])
        if config.clip_grad_norm:
            clip_global_norm(grads)
        params, moments = adam_step(params, grads, moments, config, iteration)
        losses.append(batch_loss)
        logger.info("iter=%d loss=%.6f T=%d", iteration, batch_loss, t_steps)

    params = params.float32_rounded()
    accuracies: Dict[int, float] = {}
    for s in shapes:
        accuracies[s.label] = min(accuracies.get(s.label, 1.0), all_cell_accuracy(s, params, config.eval_steps))
    report = TrainReport(
        losses=losses,
        accuracies=accuracies,
        classified=sum(1 for a in accuracies.values() if a == 1.0),
        n_shapes=len(accuracies),
        wall_time_s=time.perf_counter() - started,
    )
    return params, report
