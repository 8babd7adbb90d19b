# app/models/tensors.py
"""Numeric domain types: shapes, network weights, state grids and tile agents."""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Optional, Tuple

import numpy as np

STATE_SIZE = 21
HIDDEN = 40
NUM_CLASSES = 10
LOGIT_START = STATE_SIZE - NUM_CLASSES
MAX_UPDATES = 30

# (row, col) of the taps inside the 3x3 kernel
CENTER_TAP = (1, 1)
CORNER_TAPS = ((0, 0), (0, 2), (2, 0), (2, 2))

PARAM_NAMES = (
    "perceive_kernel",
    "perceive_bias",
    "dmodel_kernel_1",
    "dmodel_bias_1",
    "dmodel_kernel_2",
    "dmodel_bias_2",
)
PARAM_SHAPES: Dict[str, Tuple[int, ...]] = {
    "perceive_kernel": (3, 3, STATE_SIZE, HIDDEN),
    "perceive_bias": (HIDDEN,),
    "dmodel_kernel_1": (HIDDEN, HIDDEN),
    "dmodel_bias_1": (HIDDEN,),
    "dmodel_kernel_2": (HIDDEN, STATE_SIZE),
    "dmodel_bias_2": (STATE_SIZE,),
}
PARAM_COUNT = sum(int(np.prod(s)) for s in PARAM_SHAPES.values())


class Direction(Enum):
    """Cardinal links of a tile. Values are (dy, dx) with row 0 at the top."""

    N = (-1, 0)
    E = (0, 1)
    S = (1, 0)
    W = (0, -1)

    @property
    def opposite(self) -> "Direction":
        return _OPPOSITE[self]

    @property
    def tap(self) -> Tuple[int, int]:
        dy, dx = self.value
        return (1 + dy, 1 + dx)


_OPPOSITE = {Direction.N: Direction.S, Direction.S: Direction.N, Direction.E: Direction.W, Direction.W: Direction.E}


@dataclass(frozen=True)
class ShapeGrid:
    """Occupancy mask of a tile assembly plus its digit label.

    ``mask`` holds ``height`` rows of ``width`` booleans; construction does not
    validate, use ``shape_catalog.validate_shape`` for that.
    """

    width: int
    height: int
    mask: Tuple[Tuple[bool, ...], ...]
    label: int

    @property
    def array(self) -> np.ndarray:
        return np.array(self.mask, dtype=bool).reshape(self.height, self.width)

    @property
    def active_cells(self) -> Tuple[Tuple[int, int], ...]:
        """Active (y, x) positions in row-major order."""
        return tuple((y, x) for y in range(self.height) for x in range(self.width) if self.mask[y][x])

    @property
    def n_active(self) -> int:
        return sum(sum(row) for row in self.mask)


@dataclass(eq=False)
class ModelParams:
    perceive_kernel: np.ndarray
    perceive_bias: np.ndarray
    dmodel_kernel_1: np.ndarray
    dmodel_bias_1: np.ndarray
    dmodel_kernel_2: np.ndarray
    dmodel_bias_2: np.ndarray

    @classmethod
    def zeros(cls) -> "ModelParams":
        return cls(**{name: np.zeros(PARAM_SHAPES[name]) for name in PARAM_NAMES})

    @classmethod
    def from_dict(cls, tensors: Dict[str, np.ndarray]) -> "ModelParams":
        return cls(**{name: np.asarray(tensors[name], dtype=np.float64) for name in PARAM_NAMES})

    def as_dict(self) -> Dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self) -> "ModelParams":
        return ModelParams(**{name: t.copy() for name, t in self.as_dict().items()})

    def float32_rounded(self) -> "ModelParams":
        """Same weights rounded to the nearest float32, kept as float64 arrays."""
        return ModelParams(**{n: t.astype(np.float32).astype(np.float64) for n, t in self.as_dict().items()})

    def clamp_corners(self) -> "ModelParams":
        """Zero the diagonal taps in place and return self."""
        for r, c in CORNER_TAPS:
            self.perceive_kernel[r, c] = 0.0
        return self

    def corners_are_zero(self) -> bool:
        return all(not np.any(self.perceive_kernel[r, c]) for r, c in CORNER_TAPS)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(t)) for t in self.as_dict().values())

    def flat(self) -> np.ndarray:
        """All weights concatenated in WeightFile tensor order."""
        return np.concatenate([getattr(self, n).ravel() for n in PARAM_NAMES])

    def equals(self, other: "ModelParams") -> bool:
        return all(np.array_equal(getattr(self, n), getattr(other, n)) for n in PARAM_NAMES)


@dataclass(eq=False)
class StateGrid:
    """One state vector per grid position; empty positions stay all-zero."""

    shape: ShapeGrid
    states: np.ndarray  # (height, width, STATE_SIZE)

    def cell(self, y: int, x: int) -> np.ndarray:
        return self.states[y, x]

    def copy(self) -> "StateGrid":
        return StateGrid(self.shape, self.states.copy())


@dataclass(eq=False)
class TileAgent:
    """Simulated hardware tile running the update firmware."""

    id: Tuple[int, int]  # (y, x)
    state: np.ndarray
    neighbours: Tuple[Direction, ...]
    last_received: Dict[Direction, Optional[np.ndarray]] = field(
        default_factory=lambda: {d: None for d in Direction}
    )
    update_count: int = 0
    next_update_due: int = 0
