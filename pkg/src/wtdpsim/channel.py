"""Propagation, antenna pattern, fading and per-slot decoding.

Mean link SNR is ``snr0 * g_tx * g_rx * (d / delta) ** -eta``; instantaneous SNR
multiplies it by the fading power ``|h|^2`` (unit mean). A frame is decoded when
``log2(1 + SINR) >= R``, with all other same-frequency transmissions in range
counted as interference. Several frames may be captured in one slot.
"""

import logging
import math
from enum import Enum
from typing import List, Optional, Protocol, Sequence, Tuple, runtime_checkable

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .model import Frame

logger = logging.getLogger("wtdpsim.channel")

SPEED_OF_LIGHT = 299_792_458.0


class ChannelError(Exception):
    """Base exception for channel model errors."""


class FadingKind(str, Enum):
    """Small-scale fading model."""

    RAYLEIGH = "rayleigh"
    RICIAN = "rician"


class ChannelParams(BaseModel):
    """Link budget, fading and rate parameters."""

    snr0_db: float = Field(default=15.0, description="Mean one-hop SNR in dB")
    eta: float = Field(default=3.5, gt=0.0, description="Path-loss exponent")
    F: int = Field(default=1, ge=1, description="Frequency reuse period in hops")
    R: float = Field(default=1.5, gt=0.0, description="Rate in bits/sec/Hz")
    fading: FadingKind = FadingKind.RAYLEIGH
    k_factor: float = Field(default=0.0, ge=0.0, description="Rician K (linear)")
    speed_kmh: float = Field(default=1.0, ge=0.0, description="Train speed v")
    slot_ms: float = Field(default=100.0, gt=0.0, description="Slot duration T")
    carrier_ghz: float = Field(default=5.8, gt=0.0, description="Carrier frequency")
    n_oscillators: int = Field(
        default=32, ge=16, description="Sinusoids per link in the Jakes process"
    )

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def _check_finite(self) -> "ChannelParams":
        if not math.isfinite(self.snr0_db):
            raise ValueError("snr0_db must be finite")
        return self

    @property
    def snr0_lin(self) -> float:
        """Mean one-hop SNR, linear."""
        return 10.0 ** (self.snr0_db / 10.0)

    @property
    def sinr_threshold(self) -> float:
        """Smallest SINR that supports rate R."""
        return 2.0**self.R - 1.0

    @property
    def doppler_hz(self) -> float:
        """Maximum Doppler shift ``v / lambda``."""
        wavelength = SPEED_OF_LIGHT / (self.carrier_ghz * 1e9)
        return (self.speed_kmh / 3.6) / wavelength


class AntennaPattern(BaseModel):
    """Sector antenna: flat mainlobe, flat sidelobe at ``-L`` dB, no backlobe."""

    theta: float = Field(
        default=math.pi / 3, gt=0.0, le=math.pi, description="Mainbeam width"
    )
    sidelobe_db: float = Field(default=6.0, ge=0.0, description="Sidelobe loss L")

    model_config = ConfigDict(frozen=True)


class LinkGain(BaseModel):
    """Gain of one directed link in one slot."""

    avg_snr_lin: float = Field(ge=0.0)
    h2: float = Field(ge=0.0)

    model_config = ConfigDict(frozen=True)

    @property
    def snr(self) -> float:
        """Instantaneous received SNR."""
        return self.avg_snr_lin * self.h2


def path_gain_hops(k: int, F: int, eta: float) -> float:
    """Attenuation toward the k-th same-frequency transmitter.

    The k-th transmitter on a receive frequency sits ``1 + (k - 1) F`` hops away.

    Args:
        k: Transmitter index along the frequency, 1 for the neighbor
        F: Frequency reuse period
        eta: Path-loss exponent

    Returns:
        Linear attenuation relative to one hop
    """
    if k < 1:
        raise ChannelError(f"Hop index must be at least 1, got {k}")
    return 1.0 / (1.0 + (k - 1) * F) ** eta


def path_gain_distance(distance: float, eta: float) -> float:
    """Attenuation at ``distance`` (in units of the BN spacing) relative to one hop."""
    if distance <= 0.0:
        raise ChannelError(f"Link distance must be positive, got {distance}")
    return float(distance**-eta)


def antenna_gain(angle_off_boresight: float, pattern: AntennaPattern) -> float:
    """Linear gain of a sector antenna.

    Exactly ``theta / 2`` counts as mainlobe and exactly ``pi / 2`` as sidelobe.

    Args:
        angle_off_boresight: Angle in ``[0, pi]``
        pattern: Antenna pattern

    Returns:
        1 in the mainlobe, ``10^(-L/10)`` in the sidelobe, 0 behind the antenna
    """
    # Tolerance absorbs atan2 rounding for BNs directly across the track.
    if angle_off_boresight <= pattern.theta / 2 + 1e-12:
        return 1.0
    if angle_off_boresight <= math.pi / 2 + 1e-12:
        return 10.0 ** (-pattern.sidelobe_db / 10.0)
    return 0.0


def decodable(
    signal: np.ndarray, total_power: np.ndarray, threshold: float
) -> np.ndarray:
    """Decide capture for each signal given the total received power.

    Args:
        signal: Instantaneous SNR of each frame
        total_power: Sum of all same-frequency SNRs at that frame's receiver
        threshold: ``2^R - 1``

    Returns:
        Boolean mask of frames whose SINR reaches the threshold
    """
    sinr = signal / (1.0 + (total_power - signal))
    return (signal > 0.0) & (sinr >= threshold)


def decode_slot(
    rx: str,
    transmitters: Sequence[Tuple[LinkGain, Frame]],
    R: float,
) -> List[Frame]:
    """Return every frame captured by one receiving antenna in one slot.

    Args:
        rx: Label of the receiving antenna, used for logging only
        transmitters: This slot's gains and frames on the rx frequency
        R: Rate in bits/sec/Hz

    Returns:
        Decoded frames, in transmitter order
    """
    if not transmitters:
        return []
    signal = np.array([gain.snr for gain, _ in transmitters], dtype=float)
    mask = decodable(signal, np.full_like(signal, signal.sum()), 2.0**R - 1.0)
    decoded = [frame for (_, frame), ok in zip(transmitters, mask) if ok]
    logger.debug(f"{rx}: {len(decoded)}/{len(transmitters)} frames decoded")
    return decoded


def decode_links(
    rx_index: np.ndarray,
    signal: np.ndarray,
    n_receivers: int,
    threshold: float,
) -> np.ndarray:
    """Vectorised :func:`decode_slot` over every link of a scenario.

    Args:
        rx_index: Receiving antenna of each link
        signal: Instantaneous SNR of each link, zero when the transmitter is idle
        n_receivers: Number of receiving antennas
        threshold: ``2^R - 1``

    Returns:
        Boolean mask of decoded links
    """
    totals = np.bincount(rx_index, weights=signal, minlength=n_receivers)
    return decodable(signal, totals[rx_index], threshold)


@runtime_checkable
class FadingProcess(Protocol):
    """Per-link fading state for one trial.

    Implementations own one state per directed link and return the fading power
    of every link for consecutive slots.
    """

    @property
    def n_links(self) -> int:
        """Number of directed links."""
        ...

    def draw(self, rng: np.random.Generator) -> np.ndarray:
        """Return ``|h|^2`` for every link in the next slot."""
        ...


class RayleighFading:
    """Block Rayleigh fading, independent across slots and links."""

    def __init__(self, n_links: int) -> None:
        """Initialise the process.

        Args:
            n_links: Number of directed links
        """
        self._n_links = n_links

    @property
    def n_links(self) -> int:
        """Number of directed links."""
        return self._n_links

    def draw(self, rng: np.random.Generator) -> np.ndarray:
        """Return unit-mean exponential fading powers."""
        return rng.exponential(1.0, size=self._n_links)


class JakesRicianFading:
    """Rician fading whose diffuse part follows a sum-of-sinusoids Jakes process.

    Each link carries ``n_oscillators`` sinusoids with uniform arrival angles and
    complex-Gaussian weights, so the diffuse component is exactly CN(0, 1) in
    every slot and its autocorrelation averages to ``J0(2 pi f_d tau)``. The
    line-of-sight phasor has a fixed random phase. Fading is constant within a
    slot and frozen when the speed is zero.
    """

    def __init__(
        self, n_links: int, params: ChannelParams, rng: np.random.Generator
    ) -> None:
        """Draw the oscillator bank of every link.

        Args:
            n_links: Number of directed links
            params: Channel parameters (K-factor, speed, carrier, slot)
            rng: Trial RNG
        """
        self._n_links = n_links
        self._slot = 0
        n_osc = params.n_oscillators
        k = params.k_factor
        if math.isinf(k):
            self._los_amp, self._diffuse_amp = 1.0, 0.0
        else:
            self._los_amp = math.sqrt(k / (k + 1.0))
            self._diffuse_amp = math.sqrt(1.0 / (k + 1.0))

        self._omega = (
            2.0
            * math.pi
            * params.doppler_hz
            * np.cos(rng.uniform(0.0, 2.0 * math.pi, size=(n_links, n_osc)))
        )
        self._weights = (
            rng.standard_normal((n_links, n_osc))
            + 1j * rng.standard_normal((n_links, n_osc))
        ) / math.sqrt(2.0 * n_osc)
        self._los = np.exp(1j * rng.uniform(0.0, 2.0 * math.pi, size=n_links))
        self._slot_s = params.slot_ms / 1000.0
        logger.debug(
            f"Jakes process: {n_links} links, f_d={params.doppler_hz:.3f} Hz, "
            f"K={k}"
        )

    @property
    def n_links(self) -> int:
        """Number of directed links."""
        return self._n_links

    def draw(self, rng: np.random.Generator) -> np.ndarray:
        """Return ``|h|^2`` for the next slot; the process itself is deterministic."""
        t = self._slot * self._slot_s
        self._slot += 1
        diffuse = np.sum(self._weights * np.exp(1j * self._omega * t), axis=1)
        h = self._los_amp * self._los + self._diffuse_amp * diffuse
        return np.abs(h) ** 2


def make_fading(
    params: ChannelParams, n_links: int, rng: np.random.Generator
) -> FadingProcess:
    """Create the fading process selected by ``params``."""
    if params.fading is FadingKind.RAYLEIGH:
        return RayleighFading(n_links)
    return JakesRicianFading(n_links, params, rng)


def draw_fading(
    state: Optional[FadingProcess],
    params: ChannelParams,
    rng: np.random.Generator,
    n_links: int = 1,
) -> Tuple[np.ndarray, FadingProcess]:
    """Draw one slot of fading powers, creating the per-link state on first use.

    Args:
        state: Fading state from the previous slot, or None to initialise
        params: Channel parameters
        rng: Trial RNG
        n_links: Number of links, used only when initialising

    Returns:
        Tuple of (fading powers for every link, updated state)
    """
    if state is None:
        state = make_fading(params, n_links, rng)
    return state.draw(rng), state
