# app/services/async_sim.py
"""Asynchronous validation of a trained NCA.

Three modes share one report type: ``sync`` (full-mask grid steps),
``listing1`` (cells sampled with replacement, updated in place) and
``firmware`` (timer-driven tiles exchanging codec-encoded messages on a
virtual clock).
"""
import heapq
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.core.errors import FormatError, UpdateCapError
from app.core.utils import STREAM_FIRMWARE, STREAM_LISTING1, make_rng
from app.models.schemas import RunReport, SimClockConfig, Snapshot, TileReport
from app.models.tensors import MAX_UPDATES, STATE_SIZE, Direction, ModelParams, ShapeGrid, TileAgent
from app.services import nca_core
from app.services.quantizer import MessageCodec

logger = logging.getLogger(__name__)

UNREPORTED = "·"

# event kinds; at equal virtual time a tile updates before it sends
_UPDATE, _SEND = 0, 1


def convergence_update(snapshots: Sequence[Snapshot], label: int) -> Optional[int]:
    """First update index from which every tile predicts ``label`` in every later snapshot."""
    converged: Optional[int] = None
    for snap in snapshots:
        if all(t.prediction == label for t in snap.tiles):
            if converged is None:
                converged = snap.update_index
        else:
            converged = None
    return converged


def _snapshot(index: int, positions, counts: Dict, predictions: Dict) -> Snapshot:
    return Snapshot(
        update_index=index,
        tiles=[
            TileReport(x=x, y=y, update_count=counts[(y, x)], prediction=predictions.get((y, x)))
            for y, x in positions
        ],
    )


def _report(mode: str, shape: ShapeGrid, snapshots: List[Snapshot]) -> RunReport:
    return RunReport(
        mode=mode,
        label=shape.label,
        width=shape.width,
        height=shape.height,
        snapshots=snapshots,
        convergence_update=convergence_update(snapshots, shape.label),
    )


def sync_validate(shape: ShapeGrid, params: ModelParams, n_steps: int = MAX_UPDATES) -> RunReport:
    positions = shape.active_cells
    snapshots = []
    rollout = nca_core.sync_rollout(shape, params, n_steps)
    next(rollout)
    for step, grid in enumerate(rollout, start=1):
        labels = nca_core.classify_grid(grid.states)
        predictions = {p: int(labels[p]) for p in positions}
        snapshots.append(_snapshot(step, positions, {p: step for p in positions}, predictions))
    return _report("sync", shape, snapshots)


def listing1_validate(shape: ShapeGrid, params: ModelParams, n_steps: int = MAX_UPDATES, rng_seed: int = 0) -> RunReport:
    """Each outer step evaluates N cells drawn uniformly with replacement, updating in place."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    rng = make_rng(rng_seed, STREAM_LISTING1)
    states = nca_core.init_grid(shape).states
    positions = shape.active_cells
    n_cells = len(positions)
    counts = {p: 0 for p in positions}
    predictions: Dict[Tuple[int, int], int] = {}
    snapshots = []
    for step in range(1, n_steps + 1):
        for _ in range(n_cells):
            y, x = positions[int(rng.integers(n_cells))]
            states[y, x] = states[y, x] + nca_core.cell_update(
                states[y, x], *nca_core.neighbour_states(states, y, x), params
            )
            counts[(y, x)] += 1
            predictions[(y, x)] = nca_core.classify(states[y, x])
        snapshots.append(_snapshot(step, positions, counts, predictions))
    report = _report("listing1", shape, snapshots)
    logger.debug("listing1 label=%d seed=%d convergence=%s", shape.label, rng_seed, report.convergence_update)
    return report


def tile_update(agent: TileAgent, params: ModelParams, codec: MessageCodec) -> TileAgent:
    """Firmware cell update: absent neighbour slots read as zero vectors."""
    if agent.update_count >= MAX_UPDATES:
        raise UpdateCapError(f"tile {agent.id} already performed {agent.update_count} updates")
    inputs = [
        codec.decode(agent.last_received[d]) if agent.last_received[d] is not None else np.zeros(STATE_SIZE)
        for d in Direction
    ]
    agent.state = agent.state + nca_core.cell_update(agent.state, *inputs, params)
    agent.update_count += 1
    return agent


def make_agents(shape: ShapeGrid) -> List[TileAgent]:
    grid = nca_core.init_grid(shape)
    mask = shape.array
    agents = []
    for y, x in shape.active_cells:
        present = []
        for d in Direction:
            ny, nx = y + d.value[0], x + d.value[1]
            if 0 <= ny < shape.height and 0 <= nx < shape.width and mask[ny, nx]:
                present.append(d)
        agents.append(TileAgent(id=(y, x), state=grid.states[y, x].copy(), neighbours=tuple(present)))
    return agents


@dataclass(order=True)
class _Event:
    time_ms: int
    kind: int
    tile: int


class FirmwareSimulator:
    """Single-threaded event loop ordered by (virtual time, event kind, tile index).

    Every tile runs its own timer: a seeded start phase in ``[0, send_jitter_ms]``
    plus a fresh jitter draw per period, so neighbours drift out of step and a
    tile may update before a neighbour's message for that period has arrived.
    With zero jitter all timers coincide at multiples of ``update_timeout_ms``.
    """

    def __init__(
        self,
        shape: ShapeGrid,
        params: ModelParams,
        codec: MessageCodec,
        clock: SimClockConfig,
        rng_seed: Optional[int] = None,
        max_updates: int = MAX_UPDATES,
    ):
        if not 1 <= max_updates <= MAX_UPDATES:
            raise ValueError(f"max_updates must be in 1..{MAX_UPDATES}")
        self.shape = shape
        self.params = params
        self.codec = codec
        self.clock = clock
        self.max_updates = max_updates
        self.rng = make_rng(clock.rng_seed if rng_seed is None else rng_seed, STREAM_FIRMWARE)
        self.agents = make_agents(shape)
        self._index = {agent.id: i for i, agent in enumerate(self.agents)}
        self._queue: List[_Event] = []
        self._phases: List[int] = []
        self.predictions: Dict[Tuple[int, int], int] = {}
        self.snapshots: List[Snapshot] = []
        self.messages_sent = 0
        self.messages_lost = 0
        # updates run while a present neighbour's slot was still empty
        self.blind_updates = 0

    def _jitter(self) -> int:
        if self.clock.send_jitter_ms == 0:
            return 0
        return int(self.rng.integers(0, self.clock.send_jitter_ms + 1))

    def _schedule(self, event: _Event) -> None:
        heapq.heappush(self._queue, event)

    def _schedule_update(self, tile: int, period: int) -> None:
        # jitter < timeout keeps each tile's own updates strictly ordered
        agent = self.agents[tile]
        agent.next_update_due = self._phases[tile] + period * self.clock.update_timeout_ms + self._jitter()
        self._schedule(_Event(agent.next_update_due, _UPDATE, tile))

    def _send(self, agent: TileAgent) -> None:
        message = self.codec.encode(agent.state)
        y, x = agent.id
        for d in agent.neighbours:
            self.messages_sent += 1
            if self.rng.random() < self.clock.message_loss_rate:
                self.messages_lost += 1
                continue
            receiver = self.agents[self._index[(y + d.value[0], x + d.value[1])]]
            receiver.last_received[d.opposite] = message

    def _record_if_complete(self) -> None:
        done = min(agent.update_count for agent in self.agents)
        while len(self.snapshots) < done:
            counts = {agent.id: agent.update_count for agent in self.agents}
            self.snapshots.append(
                _snapshot(len(self.snapshots) + 1, self.shape.active_cells, counts, self.predictions)
            )

    def run(self) -> RunReport:
        self._phases = [self._jitter() for _ in self.agents]
        for i in range(len(self.agents)):
            self._schedule(_Event(self._phases[i] + self._jitter(), _SEND, i))
            self._schedule_update(i, period=1)

        while self._queue:
            event = heapq.heappop(self._queue)
            agent = self.agents[event.tile]
            if event.kind == _SEND:
                self._send(agent)
                continue
            if any(agent.last_received[d] is None for d in agent.neighbours):
                self.blind_updates += 1
            tile_update(agent, self.params, self.codec)
            self.predictions[agent.id] = nca_core.classify(agent.state)
            self._record_if_complete()
            if agent.update_count < self.max_updates:
                self._schedule(_Event(event.time_ms + self._jitter(), _SEND, event.tile))
                self._schedule_update(event.tile, agent.update_count + 1)

        report = _report("firmware", self.shape, self.snapshots)
        logger.debug(
            "firmware label=%d sent=%d lost=%d blind=%d convergence=%s",
            self.shape.label,
            self.messages_sent,
            self.messages_lost,
            self.blind_updates,
            report.convergence_update,
        )
        return report


def firmware_run(
    shape: ShapeGrid,
    params: ModelParams,
    quantizer: MessageCodec,
    clock: Optional[SimClockConfig] = None,
    rng_seed: Optional[int] = None,
    max_updates: int = MAX_UPDATES,
) -> RunReport:
    return FirmwareSimulator(shape, params, quantizer, clock or SimClockConfig(), rng_seed, max_updates).run()


def render_trace(report: RunReport, unreported_glyph: str = UNREPORTED) -> str:
    """One text panel per snapshot: digit per reporting tile, marker for silent tiles, space for empty."""
    panels = []
    for snap in report.snapshots:
        rows = [[" "] * report.width for _ in range(report.height)]
        for tile in snap.tiles:
            rows[tile.y][tile.x] = str(tile.prediction) if tile.prediction is not None else unreported_glyph
        panels.append(f"update {snap.update_index}\n" + "\n".join("".join(r) for r in rows))
    return "\n\n".join(panels)


def export_report(report: RunReport) -> str:
    convergence = "-" if report.convergence_update is None else report.convergence_update
    lines = [
        f"# mode={report.mode} label={report.label} width={report.width} "
        f"height={report.height} convergence={convergence}"
    ]
    for snap in report.snapshots:
        for tile in snap.tiles:
            prediction = "-" if tile.prediction is None else tile.prediction
            lines.append(f"{snap.update_index} {tile.x} {tile.y} {prediction}")
    return "\n".join(lines) + "\n"


def parse_report(text: str) -> RunReport:
    """Inverse of ``export_report``; convergence is recomputed from the records."""
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines or not lines[0].startswith("#"):
        raise FormatError("report export must start with a '# mode=...' header")
    try:
        header = dict(item.split("=", 1) for item in lines[0][1:].split())
        label, width, height = int(header["label"]), int(header["width"]), int(header["height"])
        if width < 1 or height < 1:
            raise ValueError(f"grid size {width}x{height} must be positive")
        snapshots: Dict[int, List[TileReport]] = {}
        for number, line in enumerate(lines[1:], start=2):
            index, x, y, prediction = line.split()
            tile = TileReport(x=int(x), y=int(y), prediction=None if prediction == "-" else int(prediction))
            if not (0 <= tile.x < width and 0 <= tile.y < height):
                raise ValueError(f"line {number}: tile ({tile.x}, {tile.y}) outside the {width}x{height} grid")
            snapshots.setdefault(int(index), []).append(tile)
    except (KeyError, ValueError) as exc:
        raise FormatError(f"malformed report export: {exc}") from exc
    ordered = [Snapshot(update_index=i, tiles=tiles) for i, tiles in sorted(snapshots.items())]
    return RunReport(
        mode=header.get("mode", "unknown"),
        label=label,
        width=width,
        height=height,
        snapshots=ordered,
        convergence_update=convergence_update(ordered, label),
    )
