import numpy as np
import pytest

from app.models.tensors import CORNER_TAPS, LOGIT_START, STATE_SIZE, ModelParams, StateGrid
from app.services import nca_core
from app.services.shape_catalog import canonical_shapes, parse_shape
from tests.conftest import random_params

ORDER_SENSITIVITY_SEED = 11


def dense_conv_oracle(states: np.ndarray, params: ModelParams) -> np.ndarray:
    """Plain 9-tap zero-padded convolution followed by the two 1x1 layers."""
    height, width, _ = states.shape
    kernel = params.perceive_kernel.copy()
    for r, c in CORNER_TAPS:
        kernel[r, c] = 0.0
    out = np.zeros_like(states)
    for y in range(height):
        for x in range(width):
            acc = params.perceive_bias.copy()
            for r in range(3):
                for c in range(3):
                    ny, nx = y + r - 1, x + c - 1
                    if 0 <= ny < height and 0 <= nx < width:
                        acc = acc + states[ny, nx] @ kernel[r, c]
            h = np.maximum(acc, 0.0)
            h = np.maximum(h @ params.dmodel_kernel_1 + params.dmodel_bias_1, 0.0)
            out[y, x] = h @ params.dmodel_kernel_2 + params.dmodel_bias_2
    return out


def random_states(seed, shape):
    rng = np.random.default_rng(seed)
    states = rng.normal(size=(shape.height, shape.width, STATE_SIZE))
    return states * shape.array[..., None]


def test_init_single_cell(single_cell):
    grid = nca_core.init_grid(single_cell)
    expected = np.zeros(STATE_SIZE)
    expected[0] = 1.0
    np.testing.assert_array_equal(grid.cell(0, 0), expected)


def test_init_four_uniform():
    four = canonical_shapes()[4]
    grid = nca_core.init_grid(four)
    active = four.array
    assert np.all(grid.states[active] == grid.states[active][0])
    assert not np.any(grid.states[~active])


def test_init_state_classifies_as_zero(single_cell):
    assert nca_core.classify(nca_core.init_grid(single_cell).cell(0, 0)) == 0


def test_cell_update_zero_inputs_zero_biases(params):
    params.perceive_bias[:] = 0
    params.dmodel_bias_1[:] = 0
    params.dmodel_bias_2[:] = 0
    z = np.zeros(STATE_SIZE)
    np.testing.assert_array_equal(nca_core.cell_update(z, z, z, z, z, params), z)


def test_cell_update_zero_params_is_fixed_point():
    rng = np.random.default_rng(0)
    inputs = [rng.normal(size=STATE_SIZE) for _ in range(5)]
    assert not np.any(nca_core.cell_update(*inputs, ModelParams.zeros()))


def test_cell_update_matches_dense_oracle(params, square3):
    states = random_states(1, square3)
    oracle = dense_conv_oracle(states, params)
    delta = nca_core.cell_update(states[1, 1], *nca_core.neighbour_states(states, 1, 1), params)
    np.testing.assert_allclose(delta, oracle[1, 1], rtol=1e-6, atol=1e-12)


def test_grid_forward_matches_dense_oracle(params):
    shape = canonical_shapes()[8]
    states = random_states(2, shape)
    np.testing.assert_allclose(nca_core.forward(states, params).delta, dense_conv_oracle(states, params), rtol=1e-6, atol=1e-12)


def test_mask_all_false_is_identity(params, square3):
    grid = StateGrid(square3, random_states(4, square3))
    out = nca_core.grid_step(grid, params, np.zeros((3, 3), dtype=bool))
    np.testing.assert_array_equal(out.states, grid.states)


def test_single_cell_full_step(params, single_cell):
    grid = nca_core.init_grid(single_cell)
    z = np.zeros(STATE_SIZE)
    expected = grid.cell(0, 0) + nca_core.cell_update(grid.cell(0, 0), z, z, z, z, params)
    out = nca_core.grid_step(grid, params)
    np.testing.assert_allclose(out.cell(0, 0), expected, rtol=1e-12)


def test_masked_cells_are_bit_identical(params, full5):
    grid = StateGrid(full5, random_states(5, full5))
    mask = np.random.default_rng(6).random((5, 5)) < 0.5
    out = nca_core.grid_step(grid, params, mask)
    np.testing.assert_array_equal(out.states[~mask], grid.states[~mask])
    assert not np.array_equal(out.states[mask], grid.states[mask])


def test_half_masks_differ_from_full_step(full5):
    params = random_params(ORDER_SENSITIVITY_SEED)
    grid = nca_core.init_grid(full5)
    half = np.indices((5, 5)).sum(axis=0) % 2 == 0
    two_halves = nca_core.grid_step(nca_core.grid_step(grid, params, half), params, ~half)
    full = nca_core.grid_step(grid, params)
    assert not np.allclose(two_halves.states, full.states)


def test_zero_params_is_identity(square3):
    grid = StateGrid(square3, random_states(7, square3))
    out = nca_core.grid_step(grid, ModelParams.zeros())
    np.testing.assert_array_equal(out.states, grid.states)


def test_diagonal_neighbour_cannot_influence(params, full5):
    states = random_states(8, full5)
    before = nca_core.forward(states, params).delta[2, 2]
    states[1, 1] += 10.0
    states[3, 3] -= 5.0
    after = nca_core.forward(states, params).delta[2, 2]
    np.testing.assert_array_equal(before, after)


def test_empty_cells_stay_zero(params):
    shape = canonical_shapes()[0]
    grid = nca_core.init_grid(shape)
    rng = np.random.default_rng(9)
    for _ in range(10):
        grid = nca_core.grid_step(grid, params, rng.random((5, 4)) < 0.7)
    assert not np.any(grid.states[~shape.array])


@pytest.mark.parametrize("k", [1, 2, 3])
def test_light_cone(params, full5, k):
    base = StateGrid(full5, random_states(10, full5))
    perturbed = base.copy()
    perturbed.states[0, 0, 3] += 1.0
    for _ in range(k):
        base = nca_core.grid_step(base, params)
        perturbed = nca_core.grid_step(perturbed, params)
    for y in range(5):
        for x in range(5):
            if y + x > k:
                np.testing.assert_array_equal(base.states[y, x], perturbed.states[y, x])
    assert not np.array_equal(base.states[0, 0], perturbed.states[0, 0])


def test_classify_tie_breaks():
    state = np.zeros(STATE_SIZE)
    assert nca_core.classify(state) == 0
    state[LOGIT_START + 7] = 1.0
    assert nca_core.classify(state) == 7
    state = np.zeros(STATE_SIZE)
    state[LOGIT_START : LOGIT_START + 3] = [0.2, 0.9, 0.9]
    assert nca_core.classify(state) == 1


def test_states_stay_finite(params):
    shape = parse_shape("##\n##", 3)
    *_, final = nca_core.sync_rollout(shape, random_params(12, scale=0.1), 30)
    assert np.all(np.isfinite(final.states))
