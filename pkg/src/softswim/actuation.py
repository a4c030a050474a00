"""Muscle activation signal and contractile fiber energy.

The drive signal is a periodic sloped box: during a muscle's active window
the activation ramps down from 1 toward 1 - A at rate slope * A, holds the
plateau, and ramps back up, staying at 1 outside the window. The two
muscles run the same pulse shifted by `phase_offset` periods, contracting
alternately. The fiber energy penalizes deviation of the fiber stretch
from the activation target, which is how contraction enters the solve.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit

from .errors import DegenerateGeometryError
from .geometry import Region

DEFAULT_MUSCLE_STIFFNESS = 6.5e5  # Pa, 10x the soft material default
SMOOTHING_PERIOD_FRACTION = 1e-3  # kink rounding radius as a fraction of T


@dataclass(frozen=True)
class ActuationParams:
    """Parameters of the sloped-box drive.

    amplitude: peak contraction A in [0, 1); activation bottoms out at 1 - A.
    slope: reciprocal edge duration (1/s); ramps run at rate slope * A.
    frequency: pulse repetition rate (Hz).
    phase_offset: fraction of a period by which the lower muscle lags.
    muscle_stiffness: energy weight w (Pa) of the fiber penalty.
    duty: fraction of the period each muscle is active.
    smooth: round the trapezoid kinks so parameter derivatives exist
        everywhere (used during optimization).
    """

    amplitude: float
    slope: float
    frequency: float
    phase_offset: float = 0.5
    muscle_stiffness: float = DEFAULT_MUSCLE_STIFFNESS
    duty: float = 0.5
    smooth: bool = False

    def __post_init__(self):
        if not 0.0 <= self.amplitude < 1.0:
            raise ValueError(f"amplitude must be in [0, 1), got {self.amplitude}")
        if self.slope <= 0.0:
            raise ValueError(f"slope must be positive, got {self.slope}")
        if self.frequency <= 0.0:
            raise ValueError(f"frequency must be positive, got {self.frequency}")
        if not 0.0 <= self.phase_offset < 1.0:
            raise ValueError(f"phase_offset must be in [0, 1), got {self.phase_offset}")
        if self.muscle_stiffness <= 0.0:
            raise ValueError("muscle_stiffness must be positive")
        if not 0.0 < self.duty < 1.0:
            raise ValueError(f"duty must be in (0, 1), got {self.duty}")

    def with_(self, **kwargs) -> "ActuationParams":
        return replace(self, **kwargs)


def _muscle_delay(params: ActuationParams, muscle: Region) -> float:
    if muscle == Region.UPPER_MUSCLE:
        return 0.0
    if muscle == Region.LOWER_MUSCLE:
        return params.phase_offset / params.frequency
    raise ValueError(f"{muscle!r} is not a muscle region")


def _pulse_shape(tau, params: ActuationParams):
    """Unit pulse shape eta(tau) in [0, 1] and its slope derivative.

    eta = clamp(min(1, s*tau, s*(duty*T - tau)), 0, 1); the activation is
    a = 1 - A*eta, so d(eta)/ds fully determines the slope derivative.
    """
    s = params.slope
    window = params.duty / params.frequency
    z_up = s * tau
    z_down = s * (window - tau)

    if not params.smooth:
        eta = np.maximum(0.0, np.minimum(1.0, np.minimum(z_up, z_down)))
        # branch-wise d(eta)/ds; zero on the plateau and outside the window
        rising = (z_up < z_down) & (z_up < 1.0) & (z_up > 0.0)
        falling = (z_down <= z_up) & (z_down < 1.0) & (z_down > 0.0)
        deta_ds = np.where(rising, tau, 0.0) + np.where(falling, window - tau, 0.0)
        return eta, deta_ds

    # Smoothed variant: soft-min of the three branches followed by a
    # softplus against zero. eps is the kink radius (a fixed fraction of
    # the period) expressed in activation units via the ramp rate s.
    eps = max(s * SMOOTHING_PERIOD_FRACTION / params.frequency, 1e-12)
    m = -eps * np.logaddexp(np.logaddexp(-1.0 / eps, -z_up / eps), -z_down / eps)
    # softmin weights of the two s-dependent branches
    w_up = np.exp((m - z_up) / eps)
    w_down = np.exp((m - z_down) / eps)
    sig = expit(m / eps)
    eta = eps * np.logaddexp(0.0, m / eps)
    deta_ds = sig * (w_up * tau + w_down * (window - tau))
    return eta, deta_ds


def activation_signal(t, params: ActuationParams, muscle: Region):
    """Activation a(t) for one muscle; scalar in, scalar out (or arrays)."""
    a, _, _ = activation_signal_derivatives(t, params, muscle)
    return a


def activation_signal_derivatives(t, params: ActuationParams, muscle: Region):
    """Activation and its analytic derivatives (a, da/dA, da/ds)."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0.0):
        raise ValueError("t must be non-negative")
    period = 1.0 / params.frequency
    tau = np.mod(t_arr - _muscle_delay(params, muscle), period)
    eta, deta_ds = _pulse_shape(tau, params)
    a = 1.0 - params.amplitude * eta
    da_dA = -eta
    da_ds = -params.amplitude * deta_ds
    if np.isscalar(t):
        return float(a), float(da_dA), float(da_ds)
    return a, da_dA, da_ds


# ---------------------------------------------------------------------------
# Contractile fiber energy
# ---------------------------------------------------------------------------

def _fiber_stretch(F, fiber):
    fiber = np.asarray(fiber, dtype=float)
    norm = np.linalg.norm(fiber)
    if norm < 1e-12:
        raise DegenerateGeometryError("muscle fiber vector is zero")
    if abs(norm - 1.0) > 1e-9:
        raise ValueError(f"fiber must be a unit vector, |f| = {norm}")
    u = np.asarray(F, dtype=float) @ fiber
    return u, float(np.linalg.norm(u))


def muscle_energy(F, fiber, a: float, w: float, area: float) -> float:
    """Fiber penalty (w/2) * area * (|F f| - a)^2 in joules."""
    if a <= 0.0:
        raise ValueError(f"activation must be positive, got {a}")
    _, n = _fiber_stretch(F, fiber)
    return 0.5 * w * area * (n - a) ** 2


def muscle_energy_gradient(F, fiber, a: float, w: float, area: float) -> np.ndarray:
    """dE/dF as a 2x2 matrix."""
    u, n = _fiber_stretch(F, fiber)
    f = np.asarray(fiber, dtype=float)
    return w * area * (n - a) * np.outer(u, f) / n


def muscle_energy_hessian(F, fiber, a: float, w: float, area: float) -> np.ndarray:
    """d2E/dF2 as a (2, 2, 2, 2) tensor, H[i, j, k, l] = dP_ij / dF_kl."""
    u, n = _fiber_stretch(F, fiber)
    f = np.asarray(fiber, dtype=float)
    uf = np.outer(u, f)
    H = np.einsum("ij,kl->ijkl", uf, uf) / n**2
    H += (n - a) * (
        np.einsum("ik,j,l->ijkl", np.eye(2), f, f) / n
        - np.einsum("ij,kl->ijkl", uf, uf) / n**3
    )
    return w * area * H


# ---------------------------------------------------------------------------
# Voltage -> amplitude table
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AmplitudeTable:
    """Sorted (voltage, amplitude) knots for the fitted drive strength."""

    entries: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if len(self.entries) == 0:
            raise ValueError("amplitude table must not be empty")
        volts = [v for v, _ in self.entries]
        if any(b <= a for a, b in zip(volts, volts[1:])):
            raise ValueError("table voltages must be strictly increasing")
        if any(not 0.0 <= amp < 1.0 for _, amp in self.entries):
            raise ValueError("table amplitudes must be in [0, 1)")

    @property
    def voltages(self) -> np.ndarray:
        return np.array([v for v, _ in self.entries])

    @property
    def amplitudes(self) -> np.ndarray:
        return np.array([a for _, a in self.entries])

    def to_json_obj(self) -> list:
        return [[float(v), float(a)] for v, a in self.entries]

    @classmethod
    def from_json_obj(cls, obj) -> "AmplitudeTable":
        return cls(tuple((float(v), float(a)) for v, a in obj))


def interpolate_amplitude(voltage: float, table: AmplitudeTable) -> tuple[float, bool]:
    """Piecewise-linear amplitude at `voltage`.

    Returns (amplitude, clamped); clamped is True when the voltage falls
    outside the table span and the boundary amplitude was used.
    """
    volts = table.voltages
    amps = table.amplitudes
    clamped = bool(voltage < volts[0] or voltage > volts[-1])
    return float(np.interp(voltage, volts, amps)), clamped
