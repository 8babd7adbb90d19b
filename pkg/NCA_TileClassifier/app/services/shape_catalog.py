# app/services/shape_catalog.py
"""Digit shapes the tiles classify: fixed catalogs plus the '#'/'.' text format."""
import logging
from pathlib import Path
from typing import Dict, List, Union

import numpy as np
from scipy import ndimage

from app.core.errors import ShapeFormatError, ShapeValidityError
from app.models.tensors import NUM_CLASSES, ShapeGrid

logger = logging.getLogger(__name__)

ACTIVE, EMPTY = "#", "."
FOUR_NEIGHBOURS = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])

# 4 wide x 5 high; every pair of digits differs in at least three cells
_CANONICAL: Dict[int, str] = {
    0: "###.\n#.#.\n#.#.\n#.#.\n###.",
    1: ".##.\n..#.\n..#.\n..#.\n.###",
    2: "####\n...#\n..##\n.##.\n####",
    3: "####\n...#\n.###\n...#\n####",
    4: "#.#.\n#.#.\n####\n..#.\n..#.",
    5: "####\n#...\n###.\n..#.\n###.",
    6: "#...\n#...\n####\n#..#\n####",
    7: "####\n...#\n..##\n..#.\n..#.",
    8: "####\n#..#\n####\n#..#\n####",
    9: "####\n#..#\n####\n...#\n...#",
}

# 3 wide x 4 high; an "8" cannot hold two holes here, it keeps the upper loop
_SCALED_DOWN: Dict[int, str] = {
    0: "###\n#.#\n#.#\n###",
    1: "##.\n.#.\n.#.\n###",
    4: "#.#\n###\n..#\n..#",
    7: "###\n..#\n.##\n.#.",
    8: "###\n#.#\n###\n###",
}

# 6 wide x 7 high, the canonical strokes stretched at one cell thickness
_SCALED_UP: Dict[int, str] = {
    0: "#####.\n#...#.\n#...#.\n#...#.\n#...#.\n#...#.\n#####.",
    1: "..##..\n...#..\n...#..\n...#..\n...#..\n...#..\n..###.",
    2: "######\n.....#\n....##\n...##.\n..##..\n..#...\n######",
    3: "######\n.....#\n.....#\n..####\n.....#\n.....#\n######",
    4: "#...#.\n#...#.\n#...#.\n######\n....#.\n....#.\n....#.",
    5: "######\n#.....\n#.....\n#####.\n....#.\n....#.\n#####.",
    6: "#.....\n#.....\n#.....\n######\n#....#\n#....#\n######",
    7: "######\n.....#\n.....#\n....##\n....#.\n....#.\n....#.",
    8: "######\n#....#\n#....#\n######\n#....#\n#....#\n######",
    9: "######\n#....#\n#....#\n######\n.....#\n.....#\n.....#",
}

CATALOG_PREFIXES = {"canonical": _CANONICAL, "down": _SCALED_DOWN, "up": _SCALED_UP}


def _build(table: Dict[int, str]) -> List[ShapeGrid]:
    return [parse_shape(text, label) for label, text in sorted(table.items())]


def canonical_shapes() -> List[ShapeGrid]:
    return _build(_CANONICAL)


def scaled_down_shapes() -> List[ShapeGrid]:
    return _build(_SCALED_DOWN)


def scaled_up_shapes() -> List[ShapeGrid]:
    return _build(_SCALED_UP)


def catalog(name: str) -> List[ShapeGrid]:
    """Shapes of a catalog by experiment name (canonical, scaled_down, scaled_up)."""
    builders = {"canonical": canonical_shapes, "scaled_down": scaled_down_shapes, "scaled_up": scaled_up_shapes}
    return builders[name]()


def catalog_shape(prefix: str, label: int) -> ShapeGrid:
    """Look up ``<prefix>:<label>``; raises KeyError when absent."""
    return parse_shape(CATALOG_PREFIXES[prefix][label], label)


def is_four_connected(mask: np.ndarray) -> bool:
    _, n_components = ndimage.label(mask, structure=FOUR_NEIGHBOURS)
    return n_components == 1


def validate_shape(shape: ShapeGrid) -> ShapeGrid:
    if not 0 <= shape.label < NUM_CLASSES:
        raise ShapeValidityError(f"label {shape.label} outside 0..{NUM_CLASSES - 1}")
    mask = shape.array
    if not mask.any():
        raise ShapeValidityError("shape has no active cells")
    if not is_four_connected(mask):
        raise ShapeValidityError("active cells are not a single 4-connected component")
    return shape


def parse_shape(text: str, label: int) -> ShapeGrid:
    lines = [line.rstrip("\r") for line in text.strip("\n").split("\n")]
    if not lines or not lines[0]:
        raise ShapeFormatError("empty shape text")
    width = len(lines[0])
    for row, line in enumerate(lines):
        if len(line) != width:
            raise ShapeFormatError(f"line {row} has length {len(line)}, expected {width}")
        foreign = set(line) - {ACTIVE, EMPTY}
        if foreign:
            raise ShapeFormatError(f"line {row} contains foreign glyph(s) {sorted(foreign)!r}")
    mask = tuple(tuple(ch == ACTIVE for ch in line) for line in lines)
    return validate_shape(ShapeGrid(width=width, height=len(lines), mask=mask, label=int(label)))


def render_shape(shape: ShapeGrid) -> str:
    return "\n".join("".join(ACTIVE if cell else EMPTY for cell in row) for row in shape.mask)


def load_shape_file(path: Union[str, Path]) -> ShapeGrid:
    text = Path(path).read_text(encoding="utf-8")
    header, _, body = text.partition("\n")
    parts = header.split()
    if len(parts) != 2 or parts[0] != "label" or not parts[1].isdigit():
        raise ShapeFormatError(f"{path}: first line must be 'label <digit>'")
    return parse_shape(body, int(parts[1]))


def save_shape_file(shape: ShapeGrid, path: Union[str, Path]) -> None:
    Path(path).write_text(f"label {shape.label}\n{render_shape(shape)}\n", encoding="utf-8")
    logger.info("wrote shape %d to %s", shape.label, path)
