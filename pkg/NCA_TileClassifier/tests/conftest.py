import numpy as np
import pytest

from app.models.tensors import PARAM_NAMES, PARAM_SHAPES, ModelParams
from app.services.shape_catalog import parse_shape


def random_params(seed: int, scale: float = 0.3) -> ModelParams:
    """Dense random weights (every tensor nonzero) with the diagonal taps zeroed."""
    rng = np.random.default_rng(seed)
    params = ModelParams(**{name: rng.normal(0.0, scale, PARAM_SHAPES[name]) for name in PARAM_NAMES})
    return params.clamp_corners()


@pytest.fixture
def params():
    return random_params(3)


@pytest.fixture
def square3():
    return parse_shape("###\n###\n###", 0)


@pytest.fixture
def full5():
    return parse_shape("\n".join(["#####"] * 5), 2)


@pytest.fixture
def single_cell():
    return parse_shape("#", 1)
