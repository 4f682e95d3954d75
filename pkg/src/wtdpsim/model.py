"""Domain types and ground-truth topology shared by every other module."""

import logging
from enum import Enum
from typing import Dict, List, NewType, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

logger = logging.getLogger("wtdpsim.model")

MacAddress = NewType("MacAddress", str)
"""Opaque BN address. Ordering is only used for deterministic tie-breaking."""

CnId = NewType("CnId", str)
"""Opaque consist-network identifier; one CN may attach to several BNs."""


class Direction(str, Enum):
    """Side of a BN, shared by all BNs of a train by construction."""

    LEFT = "left"
    RIGHT = "right"

    def opposite(self) -> "Direction":
        """Return the other side."""
        return Direction.RIGHT if self is Direction.LEFT else Direction.LEFT


class FrameKind(str, Enum):
    """MAC frame kinds."""

    HELLO = "hello"
    TOPOLOGY = "topology"
    PROBE = "probe"


class Frame(BaseModel):
    """A MAC-layer frame as seen on the air.

    Hello and Probe frames carry only the sender. Topology frames are addressed to
    the sender's identified or locked neighbor and carry the sender's far-side
    table (nearest first) plus every CN attachment the sender knows about.
    """

    kind: FrameKind
    sender: MacAddress
    direction: Direction = Field(description="Boresight of the transmitting antenna")
    dest: Optional[MacAddress] = None
    mac_list: Tuple[MacAddress, ...] = ()
    cn_map: Tuple[Tuple[CnId, MacAddress], ...] = ()

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def _check_payload(self) -> "Frame":
        if self.kind is FrameKind.TOPOLOGY:
            if self.dest is None:
                raise ValueError("Topology frames must carry a destination")
            if len(set(self.mac_list)) != len(self.mac_list):
                raise ValueError("Topology mac_list must not contain duplicates")
            if self.sender in self.mac_list:
                raise ValueError("Topology mac_list must not contain the sender")
        elif self.dest is not None or self.mac_list or self.cn_map:
            raise ValueError(f"{self.kind.value} frames carry no payload")
        return self


class CnAttachment(BaseModel):
    """One CN attached to one BN."""

    cn: CnId
    mac: MacAddress

    model_config = ConfigDict(frozen=True)


class GroundTruth(BaseModel):
    """Physical layout of one train, fixed when the scenario is built."""

    bns: Tuple[MacAddress, ...] = Field(description="BNs in left-to-right order")
    cn_attachments: Tuple[CnAttachment, ...] = ()

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def _check_layout(self) -> "GroundTruth":
        if len(self.bns) < 2:
            raise ValueError("A train needs at least two BNs")
        if len(set(self.bns)) != len(self.bns):
            raise ValueError("BN MAC addresses must be unique")
        known = set(self.bns)
        for attachment in self.cn_attachments:
            if attachment.mac not in known:
                raise ValueError(f"CN {attachment.cn} attached to unknown BN")
        return self

    def neighbor(self, mac: MacAddress, side: Direction) -> Optional[MacAddress]:
        """Return the true neighbor of ``mac`` on ``side``, if any."""
        index = self.bns.index(mac)
        other = index - 1 if side is Direction.LEFT else index + 1
        if 0 <= other < len(self.bns):
            return self.bns[other]
        return None

    def cns_of(self, mac: MacAddress) -> List[CnId]:
        """Return the CNs attached to ``mac`` in declaration order."""
        return [a.cn for a in self.cn_attachments if a.mac == mac]

    def sides(self) -> List[Tuple[MacAddress, Direction]]:
        """Return every (BN, side) that has a true neighbor."""
        result = []
        for index, mac in enumerate(self.bns):
            if index > 0:
                result.append((mac, Direction.LEFT))
            if index < len(self.bns) - 1:
                result.append((mac, Direction.RIGHT))
        return result


class NdfMode(str, Enum):
    """How NDF counters are compared against M_NDF."""

    PER_SENDER = "per_sender"
    AGGREGATE = "aggregate"


class ProtocolParams(BaseModel):
    """Thresholds and MAC probabilities of the protocol."""

    m_h: int = Field(default=3, ge=1, description="ND threshold M_H")
    m_ndf: int = Field(default=20, ge=1, description="NDF threshold M_NDF")
    m_t: int = Field(default=30, ge=1, description="Topology counter threshold M_T")
    p_h: float = Field(default=0.15, ge=0.0, le=1.0, description="Hello probability")
    p_t: float = Field(default=0.15, ge=0.0, le=1.0, description="Topology probability")
    probe: bool = Field(
        default=True, description="Send Probe frames when no neighbor is known"
    )
    ndf_mode: NdfMode = NdfMode.PER_SENDER

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def _check_probabilities(self) -> "ProtocolParams":
        if self.p_h + self.p_t > 1.0 + 1e-12:
            raise ValueError(f"p_h + p_t must not exceed 1, got {self.p_h + self.p_t}")
        return self


class IdAssignment(BaseModel):
    """BN and subnet IDs assigned to one BN after inauguration."""

    mac: MacAddress
    bn_id: int
    subnets: Tuple[Tuple[CnId, int], ...]

    model_config = ConfigDict(frozen=True)


def mac_for(train: int, position: int) -> MacAddress:
    """Build the MAC address of BN ``position`` (1-based) on train ``train``."""
    return MacAddress(f"02:00:00:00:{train:02x}:{position:02x}")


def default_ground_truth(
    n_bns: int,
    train: int = 1,
    cn_attachments: Optional[List[List[str]]] = None,
) -> GroundTruth:
    """Build a train of ``n_bns`` BNs.

    Args:
        n_bns: Number of BNs
        train: Train number, used to keep MAC addresses unique across trains
        cn_attachments: CN IDs per BN in physical order; one CN per BN when omitted

    Returns:
        Ground truth for the train
    """
    bns = tuple(mac_for(train, i) for i in range(1, n_bns + 1))
    if cn_attachments is None:
        cn_attachments = [[f"T{train}.CN{i}"] for i in range(1, n_bns + 1)]
    if len(cn_attachments) != n_bns:
        raise ValueError(
            f"cn_attachments lists {len(cn_attachments)} BNs, train has {n_bns}"
        )
    attachments = tuple(
        CnAttachment(cn=CnId(cn), mac=mac)
        for mac, cns in zip(bns, cn_attachments)
        for cn in cns
    )
    return GroundTruth(bns=bns, cn_attachments=attachments)


def assign_ids(gt: GroundTruth) -> List[IdAssignment]:
    """Assign BN IDs and subnet IDs from the physical and logical topologies.

    BN IDs run 1..N in physical order. Subnet IDs are handed out to CNs in the
    left-to-right order of their first attachment; every BN sharing a CN gets the
    same subnet ID.

    Args:
        gt: Ground-truth layout

    Returns:
        One assignment per BN, in physical order
    """
    subnet_ids: Dict[CnId, int] = {}
    for mac in gt.bns:
        for cn in gt.cns_of(mac):
            if cn not in subnet_ids:
                subnet_ids[cn] = len(subnet_ids) + 1

    assignments = [
        IdAssignment(
            mac=mac,
            bn_id=index,
            subnets=tuple((cn, subnet_ids[cn]) for cn in gt.cns_of(mac)),
        )
        for index, mac in enumerate(gt.bns, start=1)
    ]
    logger.debug(f"Assigned {len(assignments)} BN IDs and {len(subnet_ids)} subnets")
    return assignments
