"""Per-BN state machine: neighbor discovery, PCC, NDF check, topology discovery and convergence."""

import logging
from enum import Enum
from typing import Callable, Dict, List, Optional, Tuple

from pydantic import BaseModel, Field, PrivateAttr

from .model import (
    CnAttachment,
    CnId,
    Direction,
    Frame,
    FrameKind,
    GroundTruth,
    IdAssignment,
    MacAddress,
    NdfMode,
    ProtocolParams,
    assign_ids,
)

logger = logging.getLogger("wtdpsim.protocol")


class ProtocolError(Exception):
    """Base exception for protocol state machine errors."""


class NodeEventKind(str, Enum):
    """Kinds of events a BN reports."""

    IDENTIFIED = "identified"
    LOCKED = "locked"
    ND_RESTART = "nd_restart"
    RED_FLAG = "red_flag"
    TABLE_UPDATED = "table_updated"
    GREEN_FLAG = "green_flag"


class RedFlagReason(str, Enum):
    """Failure detected by the NDF check."""

    IDENTIFICATION_FAILURE = "identification_failure"
    LOCKING_FAILURE = "locking_failure"


class NodeEvent(BaseModel):
    """One protocol event, emitted in causal order."""

    kind: NodeEventKind
    direction: Optional[Direction] = None
    mac: Optional[MacAddress] = None
    reason: Optional[RedFlagReason] = None


class SideState(BaseModel):
    """Protocol state of one side (one directional antenna) of a BN."""

    nd_counters: Dict[MacAddress, int] = Field(default_factory=dict)
    identified: Optional[MacAddress] = None
    locked: Optional[MacAddress] = None
    pending_topology: Optional[Frame] = None
    ndf_counters: Dict[MacAddress, int] = Field(default_factory=dict)
    topo_counter: int = 0
    converged: bool = False


class NodeState(BaseModel):
    """Complete protocol state of one BN.

    Frames decoded on a side's receive antenna are fed to :meth:`receive`;
    the ALOHA layer asks :meth:`build_frame` what to send.
    """

    mac: MacAddress
    cns: Tuple[CnId, ...] = ()
    params: ProtocolParams = Field(default_factory=ProtocolParams)
    sides: Dict[Direction, SideState] = Field(
        default_factory=lambda: {d: SideState() for d in Direction}
    )
    topo_table: Dict[Direction, List[MacAddress]] = Field(
        default_factory=lambda: {d: [] for d in Direction}
    )
    cn_table: Dict[MacAddress, List[CnId]] = Field(default_factory=dict)
    red_flag: bool = False
    green_flag: bool = False

    _frame_cache: Dict[Tuple[Direction, str], Tuple[tuple, Frame]] = PrivateAttr(
        default_factory=dict
    )

    def receive(self, direction: Direction, frame: Frame) -> List[NodeEvent]:
        """Dispatch a frame decoded on the ``direction`` receive antenna."""
        if frame.kind is FrameKind.HELLO:
            return self.on_hello(direction, frame.sender)
        if frame.kind is FrameKind.TOPOLOGY:
            return self.on_topology(direction, frame)
        return []

    def on_hello(self, direction: Direction, sender: MacAddress) -> List[NodeEvent]:
        """Count a hello frame; identify the first sender to reach M_H.

        Args:
            direction: Side the frame was received on
            sender: MAC address of the sender

        Returns:
            Events caused by the frame
        """
        side = self.sides[direction]
        if side.identified is not None:
            return []

        count = side.nd_counters.get(sender, 0) + 1
        side.nd_counters[sender] = count
        if count < self.params.m_h:
            return []

        side.identified = sender
        events = [
            NodeEvent(kind=NodeEventKind.IDENTIFIED, direction=direction, mac=sender)
        ]
        # A red-flagged node still identifies but runs no further checks.
        if side.pending_topology is not None and not self.red_flag:
            pending = side.pending_topology
            side.pending_topology = None
            events.extend(self.on_topology(direction, pending))
        return events

    def on_topology(self, direction: Direction, frame: Frame) -> List[NodeEvent]:
        """Run PCC, NDF check and topology discovery on a topology frame.

        Args:
            direction: Side the frame was received on
            frame: Decoded topology frame

        Returns:
            Events caused by the frame

        Raises:
            ProtocolError: If ``frame`` is not a topology frame
        """
        if frame.kind is not FrameKind.TOPOLOGY:
            raise ProtocolError(f"Expected a topology frame, got {frame.kind.value}")
        if self.red_flag:
            return []

        side = self.sides[direction]
        addressed = frame.dest == self.mac

        if side.locked is not None:
            if frame.sender == side.locked:
                if not addressed:
                    return []
                side.ndf_counters.clear()
                return self._update_table(direction, side, frame)
            # Frames from anyone but the locked neighbor are dropped for topology
            return self._count_ndf(direction, side, frame.sender, locked=True)

        if side.identified is None:
            if addressed:
                side.pending_topology = frame
            return []

        if addressed and frame.sender == side.identified:
            side.locked = frame.sender
            side.ndf_counters.clear()
            events = [
                NodeEvent(
                    kind=NodeEventKind.LOCKED, direction=direction, mac=frame.sender
                )
            ]
            self._evaluate_green()
            events.extend(self._update_table(direction, side, frame))
            return events

        if addressed:
            side.nd_counters.clear()
            side.ndf_counters.clear()
            side.identified = None
            return [NodeEvent(kind=NodeEventKind.ND_RESTART, direction=direction)]

        return self._count_ndf(direction, side, frame.sender, locked=False)

    def _count_ndf(
        self,
        direction: Direction,
        side: SideState,
        sender: MacAddress,
        locked: bool,
    ) -> List[NodeEvent]:
        side.ndf_counters[sender] = side.ndf_counters.get(sender, 0) + 1
        if self.params.ndf_mode is NdfMode.AGGREGATE:
            reached = sum(side.ndf_counters.values()) >= self.params.m_ndf
        else:
            reached = side.ndf_counters[sender] >= self.params.m_ndf
        if not reached:
            return []

        self.red_flag = True
        self.green_flag = False
        if locked:
            reason = RedFlagReason.LOCKING_FAILURE
        else:
            reason = RedFlagReason.IDENTIFICATION_FAILURE
        logger.debug(f"{self.mac}: red flag on {direction.value} side ({reason.value})")
        return [
            NodeEvent(kind=NodeEventKind.RED_FLAG, direction=direction, reason=reason)
        ]

    def _update_table(
        self, direction: Direction, side: SideState, frame: Frame
    ) -> List[NodeEvent]:
        assert side.locked is not None
        table = [side.locked]
        for mac in frame.mac_list:
            if mac != self.mac and mac not in table:
                table.append(mac)

        changed = table != self.topo_table[direction]
        if changed:
            self.topo_table[direction] = table
        for cn, mac in frame.cn_map:
            if mac == self.mac:
                continue
            known = self.cn_table.setdefault(mac, [])
            if cn not in known:
                known.append(cn)
                changed = True

        if changed:
            side.topo_counter = 0
            side.converged = False
            self._evaluate_green()
            return [NodeEvent(kind=NodeEventKind.TABLE_UPDATED, direction=direction)]

        side.topo_counter += 1
        if side.topo_counter >= self.params.m_t and not side.converged:
            side.converged = True
            if self._evaluate_green():
                return [NodeEvent(kind=NodeEventKind.GREEN_FLAG)]
        return []

    def _evaluate_green(self) -> bool:
        """Recompute the green flag; return True when it has just been raised."""
        locked = [s for s in self.sides.values() if s.locked is not None]
        green = bool(locked) and all(s.converged for s in locked)
        raised = green and not self.green_flag
        self.green_flag = green
        return raised

    def build_frame(self, direction: Direction, kind: FrameKind) -> Optional[Frame]:
        """Build the frame to send on the ``direction`` antenna.

        Args:
            direction: Antenna that transmits this slot
            kind: Kind drawn by the ALOHA layer (hello or topology)

        Returns:
            The frame, or None when a topology draw finds no neighbor and Probe
            frames are disabled, or when the node has raised a red flag
        """
        if kind is FrameKind.HELLO:
            return self._cached(direction, ("hello",), self._hello)
        if self.red_flag:
            return None
        side = self.sides[direction]
        neighbor = side.locked or side.identified
        if neighbor is None or kind is FrameKind.PROBE:
            if not self.params.probe and kind is not FrameKind.PROBE:
                return None
            return self._cached(direction, ("probe",), self._probe)

        mac_list = tuple(self.topo_table[direction.opposite()])
        cn_map = tuple((cn, self.mac) for cn in self.cns) + tuple(
            (cn, mac) for mac in mac_list for cn in self.cn_table.get(mac, ())
        )
        key = ("topology", neighbor, mac_list, cn_map)
        return self._cached(
            direction,
            key,
            lambda d: Frame(
                kind=FrameKind.TOPOLOGY,
                sender=self.mac,
                direction=d,
                dest=neighbor,
                mac_list=mac_list,
                cn_map=cn_map,
            ),
        )

    def _cached(
        self, direction: Direction, key: tuple, build: Callable[[Direction], Frame]
    ) -> Frame:
        cache_key = (direction, key[0])
        hit = self._frame_cache.get(cache_key)
        if hit is not None and hit[0] == key:
            return hit[1]
        frame = build(direction)
        self._frame_cache[cache_key] = (key, frame)
        return frame

    def _hello(self, direction: Direction) -> Frame:
        return Frame(kind=FrameKind.HELLO, sender=self.mac, direction=direction)

    def _probe(self, direction: Direction) -> Frame:
        return Frame(kind=FrameKind.PROBE, sender=self.mac, direction=direction)

    def full_topology(self) -> List[MacAddress]:
        """Return the node's current view of the physical topology, left to right."""
        return (
            list(reversed(self.topo_table[Direction.LEFT]))
            + [self.mac]
            + list(self.topo_table[Direction.RIGHT])
        )

    def logical_topology(self) -> List[IdAssignment]:
        """Return BN and subnet IDs as derived from this node's tables."""
        bns = list(dict.fromkeys(self.full_topology()))
        attachments = []
        for mac in bns:
            cns = self.cns if mac == self.mac else self.cn_table.get(mac, [])
            attachments.extend(CnAttachment(cn=cn, mac=mac) for cn in cns)
        if len(bns) < 2:
            subnets = tuple((cn, i) for i, cn in enumerate(dict.fromkeys(self.cns), 1))
            return [IdAssignment(mac=self.mac, bn_id=1, subnets=subnets)]
        return assign_ids(
            GroundTruth(bns=tuple(bns), cn_attachments=tuple(attachments))
        )
