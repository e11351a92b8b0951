"""
Three-phase voltage synthesis, Clarke transform and complex voltage streams.
"""
import logging
import math
from dataclasses import dataclass, replace
from typing import Any, List, Sequence, Tuple

import numpy as np

from .utils import as_magnitude, check_range, sampling_interval

logger = logging.getLogger(__name__)

TWO_THIRDS_PI = 2.0 * math.pi / 3.0

# sqrt(2/3) * M, rows (0, alpha, beta)
CLARKE_MATRIX = math.sqrt(2.0 / 3.0) * np.array([
    [math.sqrt(2.0) / 2.0, math.sqrt(2.0) / 2.0, math.sqrt(2.0) / 2.0],
    [1.0, -0.5, -0.5],
    [0.0, math.sqrt(3.0) / 2.0, -math.sqrt(3.0) / 2.0],
])


@dataclass(frozen=True)
class PhaseParams:
    """
    Amplitudes, frequency, sampling interval and phase angles of a three-phase source.

    Angles are in radians, frequency in Hz and dt in seconds. Use `from_quantities`
    to build one from pint quantities or strings such as "50 Hz" or "-30 deg".
    """
    amp_a: float
    amp_b: float
    amp_c: float
    freq: float
    dt: float
    theta0: float = 0.0
    dtheta_b: float = 0.0
    dtheta_c: float = 0.0

    def __post_init__(self):
        for name in ("amp_a", "amp_b", "amp_c", "freq", "dt", "theta0", "dtheta_b", "dtheta_c"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ValueError(f"PhaseParams.{name} must be finite. Got {value}.")
        for name in ("amp_a", "amp_b", "amp_c"):
            check_range(f"PhaseParams.{name}", getattr(self, name), low=0.0)
        check_range("PhaseParams.dt", self.dt, low=0.0, low_open=True)
        check_range("PhaseParams.freq", self.freq, low=0.0, high=self.nyquist, low_open=True, high_open=True)

    @classmethod
    def from_quantities(cls, amplitude: Any = 1.0, freq: Any = 50.0, dt: Any = None, sampling_rate: Any = None,
                        theta0: Any = 0.0, amp_b: Any = None, amp_c: Any = None,
                        dtheta_b: Any = 0.0, dtheta_c: Any = 0.0) -> "PhaseParams":
        """
        Builds parameters from numbers (SI), pint quantities or quantity strings.

        Args:
            amplitude: Phase-a amplitude, also used for b and c when they are not given.
            freq: System frequency (default 50 Hz).
            dt: Sampling interval. Mutually exclusive with `sampling_rate`.
            sampling_rate: Sampling frequency. Defaults to 2.5 kHz when `dt` is not given either.
            theta0: Initial phase angle.
            amp_b, amp_c: Optional amplitudes of phases b and c.
            dtheta_b, dtheta_c: Phase deviations from the nominal -2pi/3 and +2pi/3.
        """
        if dt is None and sampling_rate is None:
            sampling_rate = 2500.0
        amp_a = as_magnitude(amplitude, "V", "amplitude")
        return cls(
            amp_a=amp_a,
            amp_b=amp_a if amp_b is None else as_magnitude(amp_b, "V", "amp_b"),
            amp_c=amp_a if amp_c is None else as_magnitude(amp_c, "V", "amp_c"),
            freq=as_magnitude(freq, "Hz", "freq"),
            dt=sampling_interval(dt, sampling_rate),
            theta0=as_magnitude(theta0, "rad", "theta0"),
            dtheta_b=as_magnitude(dtheta_b, "rad", "dtheta_b"),
            dtheta_c=as_magnitude(dtheta_c, "rad", "dtheta_c"),
        )

    @property
    def nyquist(self) -> float:
        return 1.0 / (2.0 * self.dt)

    @property
    def omega_dt(self) -> float:
        """Phase advance per sample, w * dt."""
        return 2.0 * math.pi * self.freq * self.dt

    def balanced(self) -> bool:
        return (self.amp_a == self.amp_b == self.amp_c
                and self.dtheta_b == 0.0 and self.dtheta_c == 0.0)


@dataclass(frozen=True)
class ThreePhaseFrame:
    tau: int
    va: float
    vb: float
    vc: float


@dataclass(frozen=True)
class ComplexVoltage:
    """One alpha + j beta sample."""
    v: complex

    def __complex__(self):
        return complex(self.v)

    def __abs__(self):
        return abs(self.v)


@dataclass(frozen=True)
class PhasorPair:
    """Positive (A) and negative (B) sequence phasors of the complex voltage."""
    A: complex
    B: complex


@dataclass(frozen=True)
class ScenarioEvent:
    at_tau: int
    new_params: PhaseParams


def _phase_angles(p: PhaseParams, tau):
    return 2.0 * math.pi * p.freq * np.asarray(tau, dtype=float) * p.dt + p.theta0


def _phase_voltages(p: PhaseParams, tau) -> np.ndarray:
    """Stacked (va, vb, vc) for scalar or array `tau`, shape (3, ...)."""
    phi = _phase_angles(p, tau)
    return np.stack([
        p.amp_a * np.cos(phi),
        p.amp_b * np.cos(phi + p.dtheta_b - TWO_THIRDS_PI),
        p.amp_c * np.cos(phi + p.dtheta_c + TWO_THIRDS_PI),
    ])


def gen_three_phase(p: PhaseParams, tau: int) -> ThreePhaseFrame:
    """
    Evaluates the three phase voltages at sample index `tau`.

    Args:
        p (PhaseParams): Source parameters.
        tau (int): Sample index.

    Returns:
        ThreePhaseFrame: The (va, vb, vc) sample.
    """
    va, vb, vc = _phase_voltages(p, tau)
    return ThreePhaseFrame(tau=int(tau), va=float(va), vb=float(vb), vc=float(vc))


def clarke(frame: ThreePhaseFrame) -> Tuple[float, float, float]:
    """
    Power-invariant Clarke transform of a frame.

    Returns:
        tuple: (v0, v_alpha, v_beta). v0 is exposed for checks only and is never fed to filters.
    """
    vec = np.array([frame.va, frame.vb, frame.vc], dtype=float)
    if not np.all(np.isfinite(vec)):
        raise ValueError(f"Frame at tau={frame.tau} contains non-finite values.")
    v0, v_alpha, v_beta = CLARKE_MATRIX @ vec
    return float(v0), float(v_alpha), float(v_beta)


def complex_voltage(v_alpha: float, v_beta: float) -> ComplexVoltage:
    if not (math.isfinite(v_alpha) and math.isfinite(v_beta)):
        raise ValueError(f"Complex voltage components must be finite. Got ({v_alpha}, {v_beta}).")
    return ComplexVoltage(v=complex(v_alpha, v_beta))


def theoretical_phasors(p: PhaseParams) -> PhasorPair:
    """
    Closed-form positive and negative sequence phasors such that
    v(tau) = A exp(j phi) + B exp(-j phi), phi = w tau dt + theta0.
    """
    scale = math.sqrt(6.0) / 6.0
    a = scale * (p.amp_a
                 + p.amp_b * np.exp(1j * p.dtheta_b)
                 + p.amp_c * np.exp(1j * p.dtheta_c))
    b = scale * (p.amp_a
                 + p.amp_b * np.exp(-1j * (p.dtheta_b + TWO_THIRDS_PI))
                 + p.amp_c * np.exp(-1j * (p.dtheta_c - TWO_THIRDS_PI)))
    return PhasorPair(A=complex(a), B=complex(b))


def signal_power(p: PhaseParams) -> float:
    """Steady mean power E|v|^2 = |A|^2 + |B|^2 of the complex voltage."""
    pair = theoretical_phasors(p)
    return abs(pair.A) ** 2 + abs(pair.B) ** 2


def _wrap_angle(angle: float) -> float:
    return (angle + math.pi) % (2.0 * math.pi) - math.pi


def make_type_d_sag(d: float, freq: Any = 50.0, dt: Any = None, sampling_rate: Any = None,
                    theta0: Any = 0.0, amplitude: Any = 1.0) -> PhaseParams:
    """
    Parameters of a Type-D voltage sag with characteristic voltage `d`.

    The phasor set is Va = d, Vb = -d/2 - j sqrt(3)/2, Vc = -d/2 + j sqrt(3)/2
    (scaled by `amplitude`), converted to amplitudes and deviations from the
    nominal phase angles. d = 1 is the balanced source.

    Raises:
        ValueError: If `d` is outside (0, 1].
    """
    check_range("d", d, low=0.0, high=1.0, low_open=True)
    base = PhaseParams.from_quantities(amplitude=amplitude, freq=freq, dt=dt,
                                       sampling_rate=sampling_rate, theta0=theta0)
    if d == 1.0:
        return base

    vb = complex(-d / 2.0, -math.sqrt(3.0) / 2.0)
    vc = complex(-d / 2.0, math.sqrt(3.0) / 2.0)
    return replace(
        base,
        amp_a=base.amp_a * d,
        amp_b=base.amp_a * abs(vb),
        amp_c=base.amp_a * abs(vc),
        dtheta_b=_wrap_angle(np.angle(vb) + TWO_THIRDS_PI),
        dtheta_c=_wrap_angle(np.angle(vc) - TWO_THIRDS_PI),
    )


def validate_events(events: Sequence[ScenarioEvent]) -> List[ScenarioEvent]:
    """
    Checks that events start at tau = 0 and are strictly increasing.

    Raises:
        ValueError: On an empty, unsorted, overlapping or negative timeline.
    """
    events = list(events)
    if not events:
        raise ValueError("Scenario must contain at least one event.")
    for event in events:
        if not isinstance(event, ScenarioEvent):
            raise TypeError(f"Scenario entries must be ScenarioEvent. Got {type(event)}.")
        if event.at_tau < 0:
            raise ValueError(f"Scenario event at tau={event.at_tau} must have at_tau >= 0.")
    if events[0].at_tau != 0:
        raise ValueError(f"First scenario event must start at tau=0. Got {events[0].at_tau}.")
    for prev, nxt in zip(events, events[1:]):
        if nxt.at_tau <= prev.at_tau:
            raise ValueError(
                f"Scenario events must be strictly increasing in at_tau: {prev.at_tau} then {nxt.at_tau}.")
    return events


def _segments(events: Sequence[ScenarioEvent], n: int):
    bounds = [e.at_tau for e in events] + [n]
    for event, start, stop in zip(events, bounds, bounds[1:]):
        start, stop = min(start, n), min(stop, n)
        if stop > start:
            yield event.new_params, start, stop


def scenario_stream(events: Sequence[ScenarioEvent], n: int) -> np.ndarray:
    """
    Generates `n` clean complex voltage samples, switching parameters at each event.

    The phase angle is evaluated at the absolute sample index, so a switch that
    keeps the frequency keeps the phase continuous.

    Args:
        events (list[ScenarioEvent]): Timeline, first event at tau = 0.
        n (int): Number of samples.

    Returns:
        np.ndarray: complex128 array of length `n`.
    """
    events = validate_events(events)
    if n <= 0:
        raise ValueError(f"Stream length must be positive. Got {n}.")
    out = np.empty(n, dtype=complex)
    for params, start, stop in _segments(events, n):
        frames = _phase_voltages(params, np.arange(start, stop))
        _, v_alpha, v_beta = CLARKE_MATRIX @ frames
        out[start:stop] = v_alpha + 1j * v_beta
    logger.debug("Generated %d samples over %d scenario segments", n, len(events))
    return out


def segment_power(events: Sequence[ScenarioEvent], n: int) -> np.ndarray:
    """Analytic signal power of the active segment, per sample."""
    events = validate_events(events)
    power = np.empty(n, dtype=float)
    for params, start, stop in _segments(events, n):
        power[start:stop] = signal_power(params)
    return power
