# app/models/schemas.py
from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, Field, model_validator

from app.models.tensors import MAX_UPDATES

SimMode = Literal["sync", "listing1", "firmware"]
CatalogName = Literal["canonical", "scaled_down", "scaled_up"]


class TrainConfig(BaseModel):
    iterations: int = Field(2500, ge=0)
    batch_size: int = Field(128, gt=0)
    t_min: int = Field(9, ge=1)
    t_max: int = Field(29, ge=1)
    drop_rate: float = Field(0.5, ge=0.0, le=1.0)
    learning_rate: float = Field(0.001, gt=0.0)
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    rng_seed: int = Field(0, ge=0, lt=2**64)
    clip_grad_norm: bool = False
    eval_steps: int = Field(30, ge=1)

    @model_validator(mode="after")
    def check_step_bounds(self):
        if self.t_min > self.t_max:
            raise ValueError(f"t_min ({self.t_min}) must not exceed t_max ({self.t_max})")
        return self


class TrainReport(BaseModel):
    losses: List[float]
    accuracies: Dict[int, float]
    classified: int
    n_shapes: int
    wall_time_s: float

    def summary(self) -> str:
        last = f"{self.losses[-1]:.6g}" if self.losses else "-"
        acc = " ".join(f"{label}:{frac:.2f}" for label, frac in sorted(self.accuracies.items()))
        return (
            f"iterations={len(self.losses)} final_loss={last} "
            f"classified={self.classified}/{self.n_shapes} wall_time_s={self.wall_time_s:.1f} accuracy=[{acc}]"
        )


class SimClockConfig(BaseModel):
    update_timeout_ms: int = Field(2000, gt=0)
    send_jitter_ms: int = Field(100, ge=0)
    message_loss_rate: float = Field(0.0, ge=0.0, le=1.0)
    rng_seed: int = Field(0, ge=0, lt=2**64)

    @model_validator(mode="after")
    def check_jitter_within_period(self):
        if self.send_jitter_ms >= self.update_timeout_ms:
            raise ValueError(
                f"send_jitter_ms ({self.send_jitter_ms}) must be below update_timeout_ms ({self.update_timeout_ms})"
            )
        return self


class TileReport(BaseModel):
    x: int
    y: int
    update_count: Optional[int] = None
    prediction: Optional[int] = None


class Snapshot(BaseModel):
    update_index: int
    tiles: List[TileReport]


class RunReport(BaseModel):
    mode: str
    label: int
    width: int
    height: int
    snapshots: List[Snapshot] = []
    convergence_update: Optional[int] = None


class ExperimentSpec(BaseModel):
    name: CatalogName
    mode: SimMode
    seeds: List[int] = Field(default_factory=lambda: [1, 2, 3, 4, 5], min_length=1)
    max_updates: int = Field(MAX_UPDATES, ge=1, le=MAX_UPDATES)


class ExperimentRun(BaseModel):
    label: int
    seed: int
    convergence_update: Optional[int]


class ExperimentSummary(BaseModel):
    spec: ExperimentSpec
    runs: List[ExperimentRun]
    successes: int
    n_shapes: int
    median_convergence: Optional[float]


class SimulateRequest(BaseModel):
    shape_ref: str
    mode: SimMode = "firmware"
    seed: int = Field(1, ge=0, lt=2**64)
    max_updates: int = Field(MAX_UPDATES, ge=1, le=MAX_UPDATES)
