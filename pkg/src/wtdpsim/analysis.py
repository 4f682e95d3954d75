"""Closed-form neighbor-discovery model.

Per receiving side, the k-th same-frequency transmitter delivers a hello in a
slot with probability ``q_s(k)``; the number of slots it needs to deliver
``M_H`` hellos is negative binomial. Discovery is correct when the true
neighbor (k = 1) wins that counter race, and it completes when any counter
reaches ``M_H``. Network figures raise the per-side values to the number of
independent sides.
"""

import logging
import math
from enum import Enum
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import special

logger = logging.getLogger("wtdpsim.analysis")

MAX_ENUMERATION_K = 20
TAIL_TOLERANCE = 1e-10
MAX_SERIES_TERMS = 1_000_000
_CHUNK = 4096

ArrayLike = Union[int, float, Sequence[int], np.ndarray]


class AnalysisError(Exception):
    """Base exception for analysis errors."""


class KTooLargeError(AnalysisError):
    """Raised when exact enumeration over transmission states is refused."""


class NonConvergentError(AnalysisError):
    """Raised when the true neighbor can never be discovered."""


class SeriesTruncatedError(AnalysisError):
    """Raised when an infinite series hits the hard term cap before its tail bound."""


class UnsupportedAnalysisError(AnalysisError):
    """Raised for scenarios the closed-form model does not cover."""


class AnalysisMode(str, Enum):
    """How receiving sides are modelled."""

    HOMOGENEOUS = "homogeneous"
    PER_RECEIVER = "per_receiver"


class AnalysisInput(BaseModel):
    """Parameters of the closed-form model."""

    snr0_lin: float = Field(gt=0.0, description="Mean one-hop SNR, linear")
    eta: float = Field(default=3.5, gt=0.0, description="Path-loss exponent")
    F: int = Field(default=1, ge=1, description="Frequency reuse period")
    K: int = Field(default=5, ge=1, description="Same-frequency transmitters in range")
    p_h: float = Field(default=0.15, ge=0.0, le=1.0, description="Hello probability")
    p_t: float = Field(default=0.15, ge=0.0, le=1.0, description="Topology probability")
    R: float = Field(default=1.5, gt=0.0, description="Rate in bits/sec/Hz")
    m_h: int = Field(default=3, ge=1, description="ND threshold M_H")
    exponent_sides: int = Field(
        default=10, ge=1, description="Independent (BN, side) discovery instances"
    )
    mode: AnalysisMode = AnalysisMode.HOMOGENEOUS
    receivers: Optional[Tuple[int, ...]] = Field(
        default=None,
        description="Transmitters in range for each receiving side (per-receiver mode)",
    )

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def _check_input(self) -> "AnalysisInput":
        if self.p_h + self.p_t > 1.0 + 1e-12:
            raise ValueError("p_h + p_t must not exceed 1")
        if self.mode is AnalysisMode.PER_RECEIVER:
            if not self.receivers:
                raise ValueError("per_receiver mode needs the receivers list")
            if min(self.receivers) < 1:
                raise ValueError("Every receiving side needs at least one transmitter")
        return self

    @property
    def p(self) -> float:
        """Per-antenna transmit probability."""
        return self.p_h + self.p_t

    @property
    def threshold(self) -> float:
        """``2^R - 1``."""
        return 2.0**self.R - 1.0

    def hops(self, k: int) -> int:
        """Hop distance of the k-th same-frequency transmitter."""
        return 1 + (k - 1) * self.F


class SuccessProfile(BaseModel):
    """Per-slot hello success probability of each transmitter in range."""

    q_s: Tuple[float, ...]

    model_config = ConfigDict(frozen=True)

    @property
    def K(self) -> int:
        """Number of transmitters in range."""
        return len(self.q_s)


class NetworkMetrics(BaseModel):
    """Network-wide discovery figures."""

    q_star: float = Field(description="Probability every side discovers correctly")
    e_t_star: float = Field(description="Mean slots until every side completes")
    e_t_suc_star: float = Field(description="Mean slots until the first correct run")


def q_s_conditional(k: int, states: Sequence[int], inp: AnalysisInput) -> float:
    """Hello success probability of transmitter ``k`` given who transmits.

    Args:
        k: Transmitter index, 1 for the true neighbor
        states: Transmit indicator of each of the K transmitters
        inp: Model parameters

    Returns:
        Probability that ``k``'s frame is a hello and is captured
    """
    if not states[k - 1] or inp.p == 0.0:
        return 0.0
    attenuation = float(inp.hops(k)) ** inp.eta
    value = (inp.p_h / inp.p) * math.exp(-inp.threshold * attenuation / inp.snr0_lin)
    for j, on in enumerate(states, start=1):
        if j != k and on:
            value /= 1.0 + inp.threshold * attenuation / float(inp.hops(j)) ** inp.eta
    return value


def q_s(k: int, inp: AnalysisInput, K: Optional[int] = None) -> float:
    """Average :func:`q_s_conditional` over every transmission state.

    The 2^K states are enumerated exactly, in blocks, with the Bernoulli(p)
    transmit probability of sender ``k`` included so that ``q_s(k) <= p_h``.

    Args:
        k: Transmitter index, 1-based
        inp: Model parameters
        K: Transmitters in range; defaults to ``inp.K``

    Returns:
        Per-slot success probability

    Raises:
        KTooLargeError: If K exceeds the enumeration cap
    """
    K = inp.K if K is None else K
    if K > MAX_ENUMERATION_K:
        raise KTooLargeError(
            f"Exact enumeration over 2^{K} states refused (cap is K={MAX_ENUMERATION_K})"
        )
    if not 1 <= k <= K:
        raise AnalysisError(f"Transmitter index {k} outside 1..{K}")
    p = inp.p
    if p == 0.0 or inp.p_h == 0.0:
        return 0.0

    attenuation = float(inp.hops(k)) ** inp.eta
    base = (inp.p_h / p) * math.exp(-inp.threshold * attenuation / inp.snr0_lin)
    hops = np.array([inp.hops(j) for j in range(1, K + 1)], dtype=float)
    factors = 1.0 / (1.0 + inp.threshold * attenuation / hops**inp.eta)
    bits = np.arange(K)

    total = 0.0
    n_states = 1 << K
    for start in range(0, n_states, _CHUNK):
        codes = np.arange(start, min(start + _CHUNK, n_states))
        states = (codes[:, None] >> bits) & 1
        states = states[states[:, k - 1] == 1]
        on = states.sum(axis=1)
        prob = p**on * (1.0 - p) ** (K - on)
        others = np.where(states == 1, factors, 1.0)
        others[:, k - 1] = 1.0
        total += float(np.sum(prob * np.prod(others, axis=1)))
    return base * total


def success_profile(inp: AnalysisInput, K: Optional[int] = None) -> SuccessProfile:
    """Return ``q_s(k)`` for every transmitter in range."""
    K = inp.K if K is None else K
    return SuccessProfile(q_s=tuple(q_s(k, inp, K) for k in range(1, K + 1)))


def _check_domain(M: int, q: float) -> None:
    if M < 1:
        raise AnalysisError(f"Negative binomial order must be at least 1, got {M}")
    if not 0.0 <= q <= 1.0:
        raise AnalysisError(f"Success probability must lie in [0, 1], got {q}")


def _scalar_or_array(values: np.ndarray, t: ArrayLike) -> Union[float, np.ndarray]:
    return float(values) if np.ndim(t) == 0 else values


def negbin_pmf(t: ArrayLike, M: int, q: float) -> Union[float, np.ndarray]:
    """Probability that the M-th success happens exactly in slot ``t``.

    Args:
        t: Slot number(s), 1-based
        M: Number of successes
        q: Per-slot success probability

    Returns:
        ``C(t-1, M-1) q^M (1-q)^(t-M)``, zero for ``t < M``

    Raises:
        AnalysisError: If ``q`` lies outside [0, 1] or ``M < 1``
    """
    _check_domain(M, q)
    slots = np.asarray(t, dtype=float)
    valid = slots >= M
    failures = np.where(valid, slots - M, 0.0)
    if q == 0.0:
        values = np.zeros_like(slots)
    elif q == 1.0:
        values = np.where(failures == 0, 1.0, 0.0)
    else:
        log_binom = (
            special.gammaln(failures + M)
            - special.gammaln(M)
            - special.gammaln(failures + 1)
        )
        values = np.exp(log_binom + M * math.log(q) + failures * math.log1p(-q))
    values = np.where(valid, values, 0.0)
    return _scalar_or_array(values, t)


def negbin_ccdf(t: ArrayLike, M: int, q: float) -> Union[float, np.ndarray]:
    """Probability that the M-th success has not happened by slot ``t``.

    Evaluated as ``I_{1-q}(t-M+1, M)``, the complement of ``I_q(M, t-M+1)``,
    so small tails keep full relative precision.

    Args:
        t: Slot number(s)
        M: Number of successes
        q: Per-slot success probability

    Returns:
        ``P(T > t)``, one for ``t < M``

    Raises:
        AnalysisError: If ``q`` lies outside [0, 1] or ``M < 1``
    """
    _check_domain(M, q)
    slots = np.asarray(t, dtype=float)
    valid = slots >= M
    if q == 0.0:
        values = np.ones_like(slots)
    elif q == 1.0:
        values = np.where(valid, 0.0, 1.0)
    else:
        b = np.where(valid, slots - M + 1, 1.0)
        values = np.where(valid, special.betainc(b, M, 1.0 - q), 1.0)
    return _scalar_or_array(values, t)


def _side_q_c_nd(profile: SuccessProfile, m_h: int) -> float:
    q1 = profile.q_s[0]
    if q1 <= 0.0:
        raise NonConvergentError(
            "The true neighbor never delivers a hello (q_s(1) = 0); "
            "discovery cannot converge"
        )
    competitors = [q for q in profile.q_s[1:] if q > 0.0]

    total = 0.0
    start = m_h
    while True:
        if start - m_h >= MAX_SERIES_TERMS:
            raise SeriesTruncatedError(
                f"Correct-discovery series not converged after {MAX_SERIES_TERMS} terms"
            )
        slots = np.arange(start, start + _CHUNK)
        terms = np.asarray(negbin_pmf(slots, m_h, q1))
        for q in competitors:
            terms = terms * np.asarray(negbin_ccdf(slots, m_h, q))
        total += float(terms.sum())
        if float(negbin_ccdf(slots[-1], m_h, q1)) < TAIL_TOLERANCE:
            return min(total, 1.0)
        start += _CHUNK


def _side_cdf(t: np.ndarray, profile: SuccessProfile, m_h: int) -> np.ndarray:
    survival = np.ones_like(t, dtype=float)
    for q in profile.q_s:
        if q > 0.0:
            survival = survival * np.asarray(negbin_ccdf(t, m_h, q))
    return 1.0 - survival


def _profiles(inp: AnalysisInput) -> Tuple[Tuple[SuccessProfile, int], ...]:
    """Distinct success profiles with the number of sides sharing each."""
    if inp.mode is AnalysisMode.HOMOGENEOUS:
        return ((success_profile(inp), inp.exponent_sides),)
    assert inp.receivers is not None
    counts: Dict[int, int] = {}
    for K in inp.receivers:
        counts[K] = counts.get(K, 0) + 1
    return tuple((success_profile(inp, K), n) for K, n in sorted(counts.items()))


def q_c_nd(inp: AnalysisInput, profile: Optional[SuccessProfile] = None) -> float:
    """Probability that one receiving side identifies its true neighbor.

    Sums ``P(T_1 = t) * prod_k P(T_k > t)`` over ``t >= M_H`` until the tail
    of ``T_1`` falls below ``1e-10``. ``profile`` overrides the success
    probabilities derived from ``inp``.

    Raises:
        NonConvergentError: If ``q_s(1) = 0``
        SeriesTruncatedError: If the series needs more than a million terms
    """
    if profile is None:
        profile = success_profile(inp)
    return _side_q_c_nd(profile, inp.m_h)


def t_nd_cdf(
    t: ArrayLike, inp: AnalysisInput, profile: Optional[SuccessProfile] = None
) -> Union[float, np.ndarray]:
    """CDF of the slot in which one receiving side completes discovery.

    Args:
        t: Slot number(s)
        inp: Model parameters
        profile: Success probabilities; derived from ``inp`` when omitted

    Returns:
        ``1 - prod_k P(T_k > t)``
    """
    if profile is None:
        profile = success_profile(inp)
    values = _side_cdf(np.asarray(t, dtype=float), profile, inp.m_h)
    return _scalar_or_array(values, t)


def network_cdf(t: ArrayLike, inp: AnalysisInput) -> Union[float, np.ndarray]:
    """CDF of the slot in which every side has completed discovery."""
    slots = np.asarray(t, dtype=float)
    values = np.ones_like(slots)
    for profile, sides in _profiles(inp):
        values = values * _side_cdf(slots, profile, inp.m_h) ** sides
    return _scalar_or_array(values, t)


def network_metrics(inp: AnalysisInput) -> NetworkMetrics:
    """Network success probability and mean completion times.

    ``q_star`` is the product of per-side correct-discovery probabilities;
    ``e_t_star`` sums the survival function of the network completion time;
    ``e_t_suc_star`` is the mean time to the first fully correct run when
    failed runs are restarted.

    Raises:
        NonConvergentError: If some side can never discover its neighbor
        SeriesTruncatedError: If a series needs more than a million terms
    """
    profiles = _profiles(inp)
    q_star = 1.0
    for profile, sides in profiles:
        q_star *= _side_q_c_nd(profile, inp.m_h) ** sides

    e_t_star = 0.0
    start = 0
    while True:
        if start >= MAX_SERIES_TERMS:
            raise SeriesTruncatedError(
                f"Completion-time series not converged after {MAX_SERIES_TERMS} terms"
            )
        slots = np.arange(start, start + _CHUNK, dtype=float)
        cdf = np.ones_like(slots)
        for profile, sides in profiles:
            cdf = cdf * _side_cdf(slots, profile, inp.m_h) ** sides
        survival = 1.0 - cdf
        e_t_star += float(survival.sum())
        if survival[-1] < TAIL_TOLERANCE:
            break
        start += _CHUNK

    e_t_suc_star = e_t_star / q_star if q_star > 0.0 else math.inf
    logger.debug(
        f"M_H={inp.m_h}: q*={q_star:.6f} E[T*]={e_t_star:.2f} "
        f"E[T*_suc]={e_t_suc_star:.2f}"
    )
    return NetworkMetrics(q_star=q_star, e_t_star=e_t_star, e_t_suc_star=e_t_suc_star)
