# app/services/quantizer.py
"""8-bit message quantizer, weight files and the firmware array export."""
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import List, Protocol, Sequence, Tuple, Union

import numpy as np

from app.core.errors import CalibrationError, WeightFormatError, WeightValidityError
from app.models.tensors import MAX_UPDATES, PARAM_COUNT, PARAM_NAMES, PARAM_SHAPES, ModelParams, ShapeGrid
from app.services import nca_core

logger = logging.getLogger(__name__)

MAGIC = b"NCAWGT01"
CALIBRATION_MARGIN = 0.05
DEFAULT_FLASH_BYTES = 262144


class MessageCodec(Protocol):
    def encode(self, state: np.ndarray) -> np.ndarray: ...

    def decode(self, message: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class Quantizer:
    """Linear map with byte 0 <-> lo and byte 255 <-> hi."""

    lo: float
    hi: float

    def __post_init__(self):
        if not (np.isfinite(self.lo) and np.isfinite(self.hi) and self.lo < self.hi):
            raise ValueError(f"quantizer needs finite lo < hi, got lo={self.lo} hi={self.hi}")

    @property
    def step(self) -> float:
        return (self.hi - self.lo) / 255.0

    def encode(self, state: np.ndarray) -> np.ndarray:
        return quantize(state, self)

    def decode(self, message: np.ndarray) -> np.ndarray:
        return dequantize(message, self)


class IdentityCodec:
    """Lossless passthrough; messages carry the float state itself."""

    def encode(self, state: np.ndarray) -> np.ndarray:
        return np.array(state, dtype=np.float64, copy=True)

    def decode(self, message: np.ndarray) -> np.ndarray:
        return np.array(message, dtype=np.float64, copy=True)


def quantize(state: np.ndarray, q: Quantizer) -> np.ndarray:
    """Round half up, saturating outside [lo, hi]."""
    scaled = 255.0 * (np.clip(state, q.lo, q.hi) - q.lo) / (q.hi - q.lo)
    return np.clip(np.floor(scaled + 0.5), 0, 255).astype(np.uint8)


def dequantize(message: np.ndarray, q: Quantizer) -> np.ndarray:
    return q.lo + (q.hi - q.lo) * np.asarray(message, dtype=np.float64) / 255.0


def quantizer_from_range(observed_lo: float, observed_hi: float) -> Quantizer:
    """Symmetrise the observed range about zero and widen it by the calibration margin."""
    if not (np.isfinite(observed_lo) and np.isfinite(observed_hi)):
        raise CalibrationError(f"non-finite calibration range [{observed_lo}, {observed_hi}]")
    bound = max(abs(observed_lo), abs(observed_hi))
    if observed_lo == observed_hi or bound == 0.0:
        raise CalibrationError(f"degenerate calibration range [{observed_lo}, {observed_hi}]")
    bound = float(np.float32(bound * (1.0 + CALIBRATION_MARGIN)))
    return Quantizer(lo=-bound, hi=bound)


def calibrate(params: ModelParams, shapes: Sequence[ShapeGrid], n_steps: int = MAX_UPDATES) -> Quantizer:
    if not shapes:
        raise CalibrationError("calibration needs at least one shape")
    lo, hi = np.inf, -np.inf
    for shape in shapes:
        active = shape.array
        for grid in nca_core.sync_rollout(shape, params, n_steps):
            values = grid.states[active]
            lo, hi = min(lo, float(values.min())), max(hi, float(values.max()))
    q = quantizer_from_range(lo, hi)
    logger.info("calibrated quantizer observed=[%.4g, %.4g] lo=%.6g hi=%.6g", lo, hi, q.lo, q.hi)
    return q


def _dims_header() -> List[int]:
    dims: List[int] = []
    for name in PARAM_NAMES:
        shape = PARAM_SHAPES[name]
        dims.append(len(shape))
        dims.extend(shape)
    return dims


def save_weights(params: ModelParams, q: Quantizer, path: Union[str, Path]) -> None:
    if not params.corners_are_zero():
        raise WeightValidityError("refusing to save weights with nonzero diagonal taps")
    dims = _dims_header()
    blob = b"".join(
        [
            MAGIC,
            np.asarray(dims, dtype="<u4").tobytes(),
            params.flat().astype("<f4").tobytes(),
            struct.pack("<ff", q.lo, q.hi),
        ]
    )
    Path(path).write_bytes(blob)
    logger.info("wrote %d bytes of weights to %s", len(blob), path)


def load_weights(path: Union[str, Path]) -> Tuple[ModelParams, Quantizer]:
    blob = Path(path).read_bytes()
    dims = _dims_header()
    header_len = len(MAGIC) + 4 * len(dims)
    expected_len = header_len + 4 * PARAM_COUNT + 8
    if blob[: len(MAGIC)] != MAGIC:
        raise WeightFormatError(f"{path}: bad magic {blob[:len(MAGIC)]!r}")
    if len(blob) < header_len:
        raise WeightFormatError(f"{path}: truncated dims header")
    found = np.frombuffer(blob, dtype="<u4", count=len(dims), offset=len(MAGIC)).tolist()
    if found != dims:
        raise WeightFormatError(f"{path}: dims header {found} does not match {dims}")
    if len(blob) != expected_len:
        raise WeightFormatError(f"{path}: {len(blob)} bytes, expected {expected_len}")

    payload = np.frombuffer(blob, dtype="<f4", count=PARAM_COUNT, offset=header_len).astype(np.float64)
    tensors, offset = {}, 0
    for name in PARAM_NAMES:
        size = int(np.prod(PARAM_SHAPES[name]))
        tensors[name] = payload[offset : offset + size].reshape(PARAM_SHAPES[name]).copy()
        offset += size
    params = ModelParams.from_dict(tensors)
    if not params.corners_are_zero():
        raise WeightValidityError(f"{path}: nonzero diagonal taps in perceive_kernel")
    if not params.is_finite():
        raise WeightValidityError(f"{path}: non-finite weights")

    lo, hi = struct.unpack_from("<ff", blob, header_len + 4 * PARAM_COUNT)
    try:
        q = Quantizer(lo=lo, hi=hi)
    except ValueError as exc:
        raise WeightValidityError(f"{path}: {exc}") from exc
    return params, q


def _fmt(value: float) -> str:
    return np.format_float_scientific(np.float32(value), unique=True, trim="0")


def export_firmware_array(params: ModelParams, q: Quantizer, flash_bytes: int = DEFAULT_FLASH_BYTES) -> str:
    """Plain-text constant arrays for pasting into the tile firmware."""
    total_bytes = PARAM_COUNT * 4
    lines = [
        "// NCA tile update network, float32 weights",
        f"// parameter count: {PARAM_COUNT}",
        f"// flash budget: {PARAM_COUNT} x 4 = {total_bytes} bytes "
        f"({100.0 * total_bytes / flash_bytes:.1f}% of a {flash_bytes}-byte flash)",
        f"const float QUANT_LO = {_fmt(q.lo)};",
        f"const float QUANT_HI = {_fmt(q.hi)};",
    ]
    for name in PARAM_NAMES:
        tensor = getattr(params, name)
        dims = "".join(f"[{d}]" for d in tensor.shape)
        lines.append("")
        lines.append(f"// {name} {dims} ({tensor.size} values)")
        lines.append(f"const float {name}{dims} = {{")
        flat = tensor.ravel()
        for start in range(0, flat.size, 8):
            lines.append("  " + ", ".join(_fmt(v) for v in flat[start : start + 8]) + ",")
        lines.append("};")
    return "\n".join(lines) + "\n"
