# app/services/nca_core.py
"""Constrained NCA update rule.

Arrays follow the layout ``(..., height, width, STATE_SIZE)``; any leading
dims are batch dims. Only the centre and the four cardinal taps of the 3x3
perceive kernel are ever read, so diagonal neighbours cannot reach a cell.
"""
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from app.models.tensors import (
    CENTER_TAP,
    LOGIT_START,
    STATE_SIZE,
    Direction,
    ModelParams,
    ShapeGrid,
    StateGrid,
)

# centre first, then N, E, S, W: the summation order of the firmware update
TAPS = (CENTER_TAP,) + tuple(d.tap for d in Direction)


@dataclass
class ForwardCache:
    """Intermediates of one forward pass, kept for the backward pass."""

    padded: np.ndarray
    pre1: np.ndarray
    h1: np.ndarray
    pre2: np.ndarray
    h2: np.ndarray
    delta: np.ndarray


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def pad_grid(states: np.ndarray) -> np.ndarray:
    """Zero-pad the two spatial axes by one cell."""
    widths = [(0, 0)] * (states.ndim - 3) + [(1, 1), (1, 1), (0, 0)]
    return np.pad(states, widths)


def tap_view(padded: np.ndarray, tap, height: int, width: int) -> np.ndarray:
    r, c = tap
    return padded[..., r : r + height, c : c + width, :]


def forward(states: np.ndarray, params: ModelParams) -> ForwardCache:
    height, width = states.shape[-3], states.shape[-2]
    padded = pad_grid(states)
    pre1 = sum(tap_view(padded, tap, height, width) @ params.perceive_kernel[tap] for tap in TAPS)
    pre1 = pre1 + params.perceive_bias
    h1 = relu(pre1)
    pre2 = h1 @ params.dmodel_kernel_1 + params.dmodel_bias_1
    h2 = relu(pre2)
    delta = h2 @ params.dmodel_kernel_2 + params.dmodel_bias_2
    return ForwardCache(padded, pre1, h1, pre2, h2, delta)


def cell_update(
    center: np.ndarray,
    north: np.ndarray,
    east: np.ndarray,
    south: np.ndarray,
    west: np.ndarray,
    params: ModelParams,
) -> np.ndarray:
    """Additive update of one cell from its own state and its four cardinal neighbours.

    Absent neighbours are passed as zero vectors.
    """
    k = params.perceive_kernel
    x = (
        center @ k[CENTER_TAP]
        + north @ k[Direction.N.tap]
        + east @ k[Direction.E.tap]
        + south @ k[Direction.S.tap]
        + west @ k[Direction.W.tap]
    )
    x = relu(x + params.perceive_bias)
    x = relu(x @ params.dmodel_kernel_1 + params.dmodel_bias_1)
    return x @ params.dmodel_kernel_2 + params.dmodel_bias_2


def init_states(active: np.ndarray) -> np.ndarray:
    """Seed state (1, 0, ..., 0) on active cells, zeros elsewhere."""
    states = np.zeros(active.shape + (STATE_SIZE,))
    states[..., 0] = active
    return states


def init_grid(shape: ShapeGrid) -> StateGrid:
    return StateGrid(shape, init_states(shape.array))


def apply_step(states: np.ndarray, active: np.ndarray, update_mask: np.ndarray, params: ModelParams):
    """One synchronous step on raw arrays; returns (new_states, cache).

    All deltas come from ``states``; cells outside ``update_mask & active`` keep
    their exact previous values and empty cells are re-clamped to zero.
    """
    cache = forward(states, params)
    apply = (update_mask & active)[..., None]
    new_states = np.where(apply, states + cache.delta, states)
    new_states = np.where(active[..., None], new_states, 0.0)
    return new_states, cache


def grid_step(grid: StateGrid, params: ModelParams, update_mask: Optional[np.ndarray] = None) -> StateGrid:
    """Synchronous step; ``update_mask`` is an (height, width) bool array, None means update all."""
    active = grid.shape.array
    if update_mask is None:
        update_mask = np.ones_like(active)
    new_states, _ = apply_step(grid.states, active, np.asarray(update_mask, dtype=bool), params)
    return StateGrid(grid.shape, new_states)


def sync_rollout(shape: ShapeGrid, params: ModelParams, n_steps: int) -> Iterator[StateGrid]:
    """Yield the initial grid and then the grid after each full-mask step."""
    grid = init_grid(shape)
    yield grid
    for _ in range(n_steps):
        grid = grid_step(grid, params)
        yield grid


def classify(state: np.ndarray) -> int:
    """Argmax over the class logits; np.argmax keeps the lowest index on ties."""
    return int(np.argmax(state[LOGIT_START:]))


def classify_grid(states: np.ndarray) -> np.ndarray:
    return np.argmax(states[..., LOGIT_START:], axis=-1)


def neighbour_states(states: np.ndarray, y: int, x: int):
    """States of the N, E, S, W neighbours of (y, x); outside the grid is zero."""
    height, width = states.shape[0], states.shape[1]
    out = []
    for d in Direction:
        ny, nx = y + d.value[0], x + d.value[1]
        if 0 <= ny < height and 0 <= nx < width:
            out.append(states[ny, nx])
        else:
            out.append(np.zeros(STATE_SIZE))
    return out
