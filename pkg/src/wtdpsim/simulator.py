"""Slotted-ALOHA engine: geometry, frequency plan, trials and batches."""

import itertools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from enum import Enum
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .channel import (
    AntennaPattern,
    ChannelParams,
    antenna_gain,
    decode_links,
    make_fading,
    path_gain_distance,
)
from .model import (
    Direction,
    Frame,
    FrameKind,
    GroundTruth,
    MacAddress,
    ProtocolParams,
    assign_ids,
    default_ground_truth,
)
from .protocol import NodeEvent, NodeEventKind, NodeState, RedFlagReason

logger = logging.getLogger("wtdpsim.simulator")


class SimulationError(Exception):
    """Base exception for simulation errors."""


class SimulationMode(str, Enum):
    """What a trial runs."""

    INAUGURATION = "inauguration"
    DISCOVERY = "discovery"


class Scenario(BaseModel):
    """Physical layout, channel and protocol parameters of a trial."""

    trains: Tuple[GroundTruth, ...]
    delta: float = Field(default=1.0, gt=0.0, description="In-track BN spacing")
    l_over_delta: float = Field(
        default=0.0, ge=0.0, description="Track separation over BN spacing"
    )
    channel: ChannelParams = Field(default_factory=ChannelParams)
    antenna: AntennaPattern = Field(default_factory=AntennaPattern)
    proto: ProtocolParams = Field(default_factory=ProtocolParams)
    K: int = Field(default=5, ge=1, description="Hop range of same-frequency senders")
    max_slots: int = Field(default=5000, gt=0)
    seed: int = Field(default=0, ge=0)
    mode: SimulationMode = SimulationMode.INAUGURATION
    ideal: bool = Field(
        default=False, description="Only true neighbors are heard, without loss"
    )
    trace: bool = Field(default=False, description="Keep protocol events per trial")

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def _check_trains(self) -> "Scenario":
        if len(self.trains) not in (1, 2):
            raise ValueError(f"One or two trains supported, got {len(self.trains)}")
        if len(self.trains) == 2 and self.l_over_delta <= 0.0:
            raise ValueError("Two-train scenarios need l_over_delta > 0")
        macs = [mac for train in self.trains for mac in train.bns]
        if len(set(macs)) != len(macs):
            raise ValueError("MAC addresses must be unique across trains")
        return self


class AntennaRef(BaseModel):
    """One directional antenna: train index, BN position (1-based) and boresight."""

    train: int
    position: int
    pointing: Direction

    model_config = ConfigDict(frozen=True)

    @property
    def label(self) -> str:
        """Short human-readable name."""
        return f"T{self.train + 1}.BN{self.position}.{self.pointing.value}"


class FrequencyPlan(BaseModel):
    """Carrier assignment with reuse every F hops.

    Rightward links (right-pointing tx to left-pointing rx) use carriers
    ``0..F-1``; leftward links use ``F..2F-1``. The right-pointing tx of BN i
    shares its carrier with the left-pointing rx of BN i+1.
    """

    F: int = Field(ge=1)

    model_config = ConfigDict(frozen=True)

    def tx_frequency(self, position: int, pointing: Direction) -> int:
        """Carrier the antenna transmits on."""
        if pointing is Direction.RIGHT:
            return position % self.F
        return self.F + position % self.F

    def rx_frequency(self, position: int, pointing: Direction) -> int:
        """Carrier the antenna receives on."""
        if pointing is Direction.LEFT:
            return self.tx_frequency(position - 1, Direction.RIGHT)
        return self.tx_frequency(position + 1, Direction.LEFT)


class SideRecord(BaseModel):
    """First identification made by one ground-truth side of the observed train."""

    mac: MacAddress
    direction: Direction
    slot: Optional[int] = None
    identified: Optional[MacAddress] = None
    correct: bool = False


class TraceRecord(BaseModel):
    """One protocol event seen by the observer."""

    slot: int
    mac: MacAddress
    event: NodeEvent


class RunMetrics(BaseModel):
    """Outcome of one trial, as judged by the omniscient observer."""

    trial: int = 0
    nd_correct: bool = False
    nd_complete_slot: Optional[int] = None
    inaug_correct: bool = False
    inaug_complete_slot: Optional[int] = None
    red_flag_slot: Optional[int] = None
    red_flag_reason: Optional[RedFlagReason] = None
    truncated: bool = False
    identifications: List[SideRecord] = Field(default_factory=list)
    events: List[TraceRecord] = Field(default_factory=list)


class GridPointStats(BaseModel):
    """Aggregated statistics of the trials run at one grid point."""

    point: Dict[str, Any] = Field(default_factory=dict)
    trials: int
    nd_success: float
    nd_success_se: float
    inaug_success: float
    inaug_success_se: float
    mean_nd_slots: float
    mean_inaug_slots: float
    nd_time_to_success_restart: float
    nd_time_to_success_ratio: float
    inaug_time_to_success_restart: float
    inaug_time_to_success_ratio: float
    red_flag_rate: float
    truncated_rate: float


class BatchResult(BaseModel):
    """Statistics per grid point plus the raw per-trial metrics."""

    points: List[GridPointStats]
    runs: List[List[RunMetrics]]


def antenna_position(ref: AntennaRef, scenario: Scenario) -> Tuple[float, float]:
    """Return the (x, y) position of the BN carrying ``ref``."""
    x = (ref.position - 1) * scenario.delta
    y = ref.train * scenario.l_over_delta * scenario.delta
    return x, y


def angle_off_boresight(
    source: AntennaRef, target: AntennaRef, scenario: Scenario
) -> float:
    """Angle in ``[0, pi]`` between ``source``'s boresight and the direction to ``target``."""
    sx, sy = antenna_position(source, scenario)
    tx, ty = antenna_position(target, scenario)
    dx, dy = tx - sx, ty - sy
    if source.pointing is Direction.LEFT:
        dx = -dx
    return abs(math.atan2(dy, dx))


def link_snr(tx: AntennaRef, rx: AntennaRef, scenario: Scenario) -> float:
    """Mean received SNR (linear) of the directed link ``tx`` to ``rx``."""
    gain = antenna_gain(
        angle_off_boresight(tx, rx, scenario), scenario.antenna
    ) * antenna_gain(angle_off_boresight(rx, tx, scenario), scenario.antenna)
    if gain == 0.0:
        return 0.0
    m = rx.position - tx.position
    distance = math.hypot(m, (rx.train - tx.train) * scenario.l_over_delta)
    return scenario.channel.snr0_lin * gain * path_gain_distance(distance, scenario.channel.eta)


def _antennas(scenario: Scenario) -> List[AntennaRef]:
    return [
        AntennaRef(train=t, position=p, pointing=d)
        for t, train in enumerate(scenario.trains)
        for p in range(1, len(train.bns) + 1)
        for d in (Direction.LEFT, Direction.RIGHT)
    ]


def interferer_set(
    rx: AntennaRef, plan: FrequencyPlan, scenario: Scenario
) -> List[AntennaRef]:
    """List every transmit antenna the receiving antenna can hear.

    Candidates share the rx carrier, lie within ``1 + (K - 1) F`` hops in-track
    and have a non-zero combined antenna gain toward ``rx``.

    Args:
        rx: Receiving antenna
        plan: Frequency plan
        scenario: Scenario geometry

    Returns:
        Transmit antennas, nearest first
    """
    frequency = plan.rx_frequency(rx.position, rx.pointing)
    max_hops = 1 + (scenario.K - 1) * plan.F
    heard = []
    for tx in _antennas(scenario):
        if (tx.train, tx.position) == (rx.train, rx.position):
            continue
        if plan.tx_frequency(tx.position, tx.pointing) != frequency:
            continue
        if abs(tx.position - rx.position) > max_hops:
            continue
        snr = link_snr(tx, rx, scenario)
        if snr > 0.0:
            heard.append((-snr, tx.train, tx.position, tx))
    return [entry[-1] for entry in sorted(heard, key=lambda e: e[:3])]


def trial_rng(seed: int, grid_index: int, trial_index: int) -> np.random.Generator:
    """Return the RNG stream of one trial.

    Streams come from a counter-based Philox generator keyed by
    ``SeedSequence([seed, grid_index, trial_index])``, stable across platforms.
    """
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence([seed, grid_index, trial_index]))
    )


class _LinkTable:
    """Every directed link of a scenario as parallel arrays."""

    def __init__(self, scenario: Scenario, antennas: List[AntennaRef]) -> None:
        index = {ref: i for i, ref in enumerate(antennas)}
        plan = FrequencyPlan(F=scenario.channel.F)
        rx_index, tx_index, avg_snr = [], [], []
        for rx in antennas:
            if scenario.ideal:
                step = -1 if rx.pointing is Direction.LEFT else 1
                neighbor = rx.position + step
                if not 1 <= neighbor <= len(scenario.trains[rx.train].bns):
                    continue
                sources = [
                    AntennaRef(
                        train=rx.train,
                        position=neighbor,
                        pointing=rx.pointing.opposite(),
                    )
                ]
            else:
                sources = interferer_set(rx, plan, scenario)
            for tx in sources:
                rx_index.append(index[rx])
                tx_index.append(index[tx])
                avg_snr.append(link_snr(tx, rx, scenario) if not scenario.ideal else 1.0)
        self.rx_index = np.asarray(rx_index, dtype=np.intp)
        self.tx_index = np.asarray(tx_index, dtype=np.intp)
        self.avg_snr = np.asarray(avg_snr, dtype=float)

    def __len__(self) -> int:
        return len(self.rx_index)


class _Observer:
    """Omniscient operator watching the first train."""

    def __init__(self, scenario: Scenario, nodes: Dict[MacAddress, NodeState]) -> None:
        self.gt = scenario.trains[0]
        self.by_mac = {mac: nodes[mac] for mac in self.gt.bns}
        self.nodes = list(self.by_mac.values())
        self.discovery = scenario.mode is SimulationMode.DISCOVERY
        self.sides = {
            (mac, direction): SideRecord(mac=mac, direction=direction)
            for mac, direction in self.gt.sides()
        }
        self.pending_sides = len(self.sides)
        self.metrics = RunMetrics()
        self.inaug_done = self.discovery
        self.keep_trace = scenario.trace

    @property
    def finished(self) -> bool:
        return self.inaug_done and self.pending_sides == 0

    def record(self, slot: int, node: NodeState, events: List[NodeEvent]) -> None:
        for event in events:
            if self.keep_trace:
                self.metrics.events.append(
                    TraceRecord(slot=slot, mac=node.mac, event=event)
                )
            if event.kind is NodeEventKind.IDENTIFIED:
                side = self.sides.get((node.mac, event.direction))  # type: ignore[arg-type]
                if side is not None and side.slot is None:
                    side.slot = slot
                    side.identified = event.mac
                    side.correct = event.mac == self.gt.neighbor(
                        node.mac, side.direction
                    )
                    self.pending_sides -= 1
                    if self.pending_sides == 0:
                        self.metrics.nd_complete_slot = slot
            elif (
                event.kind is NodeEventKind.RED_FLAG
                and node.mac in self.by_mac
                and not self.inaug_done
                and self.metrics.red_flag_reason is None
            ):
                self.metrics.red_flag_reason = event.reason

    def end_of_slot(self, slot: int) -> None:
        if self.inaug_done:
            return
        red = [n for n in self.nodes if n.red_flag]
        if red:
            self.inaug_done = True
            self.metrics.red_flag_slot = slot
            self.metrics.inaug_complete_slot = slot
            return
        if all(n.green_flag for n in self.nodes) and all(
            self.by_mac[mac].sides[direction].converged
            for mac, direction in self.sides
        ):
            self.inaug_done = True
            self.metrics.inaug_complete_slot = slot
            truth = list(self.gt.bns)
            logical = assign_ids(self.gt)
            self.metrics.inaug_correct = all(
                n.full_topology() == truth and n.logical_topology() == logical
                for n in self.nodes
            )

    def finish(self, max_slots: int) -> RunMetrics:
        metrics = self.metrics
        if not self.inaug_done:
            metrics.truncated = True
            metrics.inaug_complete_slot = max_slots
        metrics.identifications = list(self.sides.values())
        metrics.nd_correct = self.pending_sides == 0 and all(
            s.correct for s in self.sides.values()
        )
        return metrics


def run_trial(
    scenario: Scenario, trial_index: int = 0, grid_index: int = 0
) -> RunMetrics:
    """Run one inauguration (or discovery-only) trial.

    Each slot, every antenna independently sends a hello with probability p_H,
    a topology frame with probability p_T or stays idle. Fading is drawn per
    directed link, every receiving antenna decodes what it can, and decoded
    frames are delivered to the state machines in antenna order.

    Args:
        scenario: Scenario to simulate
        trial_index: Index of the trial, selects the RNG stream
        grid_index: Index of the grid point, selects the RNG stream

    Returns:
        Observer metrics for the first train
    """
    rng = trial_rng(scenario.seed, grid_index, trial_index)
    antennas = _antennas(scenario)
    nodes: Dict[MacAddress, NodeState] = {}
    for train in scenario.trains:
        for mac in train.bns:
            nodes[mac] = NodeState(
                mac=mac, cns=tuple(train.cns_of(mac)), params=scenario.proto
            )
    antenna_nodes = [
        nodes[scenario.trains[ref.train].bns[ref.position - 1]] for ref in antennas
    ]
    links = _LinkTable(scenario, antennas)
    fading = None if scenario.ideal else make_fading(scenario.channel, len(links), rng)
    observer = _Observer(scenario, nodes)
    threshold = scenario.channel.sinr_threshold
    p_h = scenario.proto.p_h
    p_tx = scenario.proto.p_h + scenario.proto.p_t
    topology_kind = (
        FrameKind.PROBE
        if scenario.mode is SimulationMode.DISCOVERY
        else FrameKind.TOPOLOGY
    )

    slot = 0
    for slot in range(1, scenario.max_slots + 1):
        draws = rng.random(len(antennas))
        frames: List[Optional[Frame]] = [None] * len(antennas)
        for a in np.flatnonzero(draws < p_tx):
            kind = FrameKind.HELLO if draws[a] < p_h else topology_kind
            frames[a] = antenna_nodes[a].build_frame(antennas[a].pointing, kind)
        active = np.fromiter((f is not None for f in frames), dtype=bool)

        if fading is None:
            decoded = active[links.tx_index]
        else:
            signal = links.avg_snr * fading.draw(rng) * active[links.tx_index]
            decoded = decode_links(links.rx_index, signal, len(antennas), threshold)

        for link in np.flatnonzero(decoded):
            rx = links.rx_index[link]
            frame = frames[links.tx_index[link]]
            assert frame is not None
            node = antenna_nodes[rx]
            events = node.receive(antennas[rx].pointing, frame)
            if events:
                observer.record(slot, node, events)

        observer.end_of_slot(slot)
        if observer.finished:
            break

    metrics = observer.finish(scenario.max_slots)
    metrics.trial = trial_index
    logger.debug(
        f"Trial {trial_index}: nd_correct={metrics.nd_correct} "
        f"inaug_correct={metrics.inaug_correct} after {slot} slots"
    )
    return metrics


def with_parameters(scenario: Scenario, point: Mapping[str, Any]) -> Scenario:
    """Return a copy of ``scenario`` with the named parameters replaced.

    Names follow the configuration keys. ``p`` sets ``p_h = p_t = p / 2``;
    ``n_bns`` rebuilds every train with default CN attachments.

    Raises:
        SimulationError: If a name is unknown, or ``n_bns`` is given for trains
            with custom CN attachments
    """
    channel: Dict[str, Any] = {}
    antenna: Dict[str, Any] = {}
    proto: Dict[str, Any] = {}
    top: Dict[str, Any] = {}
    for name, value in point.items():
        if name in ChannelParams.model_fields:
            channel[name] = value
        elif name in ("theta_rad", "sidelobe_db"):
            antenna["theta" if name == "theta_rad" else name] = value
        elif name in ProtocolParams.model_fields:
            proto[name] = value
        elif name == "p":
            proto["p_h"] = proto["p_t"] = value / 2.0
        elif name == "n_bns":
            for t, gt in enumerate(scenario.trains, start=1):
                if gt != default_ground_truth(len(gt.bns), train=t):
                    raise SimulationError(
                        f"Cannot resize train {t}: it has custom CN attachments"
                    )
            top["trains"] = tuple(
                default_ground_truth(int(value), train=t + 1)
                for t in range(len(scenario.trains))
            )
        elif name in ("K", "max_slots", "seed", "l_over_delta", "delta", "mode", "ideal"):
            top[name] = value
        else:
            raise SimulationError(f"Unknown sweep parameter: {name}")

    updated = scenario.model_dump()
    updated["channel"].update(channel)
    updated["antenna"].update(antenna)
    updated["proto"].update(proto)
    updated.update(top)
    return Scenario.model_validate(updated)


def parameter_grid(sweep: Optional[Mapping[str, Sequence[Any]]]) -> List[Dict[str, Any]]:
    """Expand a sweep into grid points, first axis varying slowest."""
    if not sweep:
        return [{}]
    names = list(sweep)
    return [
        dict(zip(names, values))
        for values in itertools.product(*(sweep[name] for name in names))
    ]


def _restart_accumulation(times: Sequence[float], successes: Sequence[bool]) -> float:
    """Mean time to first success when failed trials are restarted in sequence."""
    runs = []
    elapsed = 0.0
    for time, ok in zip(times, successes):
        elapsed += time
        if ok:
            runs.append(elapsed)
            elapsed = 0.0
    return float(np.mean(runs)) if runs else math.nan


def summarise(
    runs: Sequence[RunMetrics], scenario: Scenario, point: Mapping[str, Any]
) -> GridPointStats:
    """Aggregate per-trial metrics into success rates and mean times.

    Times of trials that never completed count as ``max_slots``.
    """
    n = len(runs)
    nd_ok = np.array([r.nd_correct for r in runs], dtype=bool)
    nd_times = np.array(
        [r.nd_complete_slot or scenario.max_slots for r in runs], dtype=float
    )
    nd_rate = float(nd_ok.mean())
    mean_nd = float(nd_times.mean())

    if scenario.mode is SimulationMode.DISCOVERY:
        inaug_rate = inaug_se = mean_inaug = math.nan
        inaug_restart = inaug_ratio = math.nan
    else:
        inaug_ok = np.array([r.inaug_correct for r in runs], dtype=bool)
        inaug_times = np.array(
            [r.inaug_complete_slot or scenario.max_slots for r in runs], dtype=float
        )
        inaug_rate = float(inaug_ok.mean())
        inaug_se = math.sqrt(inaug_rate * (1.0 - inaug_rate) / n)
        mean_inaug = float(inaug_times.mean())
        inaug_restart = _restart_accumulation(inaug_times, inaug_ok)
        inaug_ratio = mean_inaug / inaug_rate if inaug_rate > 0 else math.nan

    return GridPointStats(
        point=dict(point),
        trials=n,
        nd_success=nd_rate,
        nd_success_se=math.sqrt(nd_rate * (1.0 - nd_rate) / n),
        inaug_success=inaug_rate,
        inaug_success_se=inaug_se,
        mean_nd_slots=mean_nd,
        mean_inaug_slots=mean_inaug,
        nd_time_to_success_restart=_restart_accumulation(nd_times, nd_ok),
        nd_time_to_success_ratio=mean_nd / nd_rate if nd_rate > 0 else math.nan,
        inaug_time_to_success_restart=inaug_restart,
        inaug_time_to_success_ratio=inaug_ratio,
        red_flag_rate=float(np.mean([r.red_flag_slot is not None for r in runs])),
        truncated_rate=float(np.mean([r.truncated for r in runs])),
    )


def _run_job(job: Tuple[Scenario, int, int]) -> RunMetrics:
    scenario, grid_index, trial_index = job
    return run_trial(scenario, trial_index=trial_index, grid_index=grid_index)


def run_batch(
    scenario: Scenario,
    trials: int,
    sweep: Optional[Mapping[str, Sequence[Any]]] = None,
    threads: int = 1,
) -> BatchResult:
    """Run ``trials`` trials at every grid point of ``sweep``.

    Args:
        scenario: Base scenario
        trials: Trials per grid point
        sweep: Optional mapping of parameter name to values
        threads: Number of worker processes

    Returns:
        Per-point statistics and raw metrics

    Raises:
        SimulationError: If ``trials`` is below one or a sweep name is unknown
    """
    points = parameter_grid(sweep)
    return run_grid(
        [(point, with_parameters(scenario, point)) for point in points],
        trials,
        threads,
    )


def run_grid(
    grid: Sequence[Tuple[Mapping[str, Any], Scenario]],
    trials: int,
    threads: int = 1,
) -> BatchResult:
    """Run ``trials`` trials for each (grid point, scenario) pair.

    Results are ordered by grid point and trial index, whatever the number of
    worker processes.

    Raises:
        SimulationError: If ``trials`` is below one
    """
    if trials < 1:
        raise SimulationError(f"trials must be at least 1, got {trials}")

    logger.info(
        f"Running {trials} trials at {len(grid)} grid points "
        f"with {threads} worker(s)"
    )
    jobs = [
        (point_scenario, grid_index, trial_index)
        for grid_index, (_, point_scenario) in enumerate(grid)
        for trial_index in range(trials)
    ]
    if threads > 1:
        chunksize = max(1, len(jobs) // (threads * 8))
        with ProcessPoolExecutor(max_workers=threads) as pool:
            metrics = list(pool.map(_run_job, jobs, chunksize=chunksize))
    else:
        metrics = [_run_job(job) for job in jobs]

    runs = [metrics[i * trials : (i + 1) * trials] for i in range(len(grid))]
    stats = []
    for (point, point_scenario), point_runs in zip(grid, runs):
        summary = summarise(point_runs, point_scenario, point)
        logger.info(
            f"Grid point {dict(point)}: nd={summary.nd_success:.4f} "
            f"inaug={summary.inaug_success:.4f}"
        )
        stats.append(summary)
    return BatchResult(points=stats, runs=runs)
