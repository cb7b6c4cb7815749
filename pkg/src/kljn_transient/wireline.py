"""Lossless two-wire line between two resistive noise-driven terminations.

The line is represented only at its endpoints (method of characteristics):
each end sees the characteristic impedance in series with a history source
equal to the wave that left the opposite end one fly time earlier.

Currents are positive when flowing into the line at either end.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .errors import InvalidParameterError


@dataclass(frozen=True)
class CableParams:
    z0: float
    fly_time: float
    dt: float
    n_delay: int

    def __post_init__(self):
        if not self.z0 > 0:
            raise InvalidParameterError(f"z0 must be positive, got {self.z0!r}")
        if not self.dt > 0:
            raise InvalidParameterError(f"dt must be positive, got {self.dt!r}")
        if not (isinstance(self.n_delay, (int, np.integer)) and self.n_delay >= 1):
            raise InvalidParameterError(f"n_delay must be a positive integer, got {self.n_delay!r}")
        if not math.isclose(self.fly_time, self.n_delay * self.dt, rel_tol=1e-9):
            raise InvalidParameterError("fly_time must equal n_delay * dt")

    @classmethod
    def from_fly_time(cls, z0: float, fly_time: float, samples_per_fly: int = 100) -> "CableParams":
        if not fly_time > 0:
            raise InvalidParameterError(f"fly_time must be positive, got {fly_time!r}")
        if int(samples_per_fly) != samples_per_fly or samples_per_fly < 1:
            raise InvalidParameterError(f"samples_per_fly must be a positive integer, got {samples_per_fly!r}")
        n = int(samples_per_fly)
        return cls(z0=z0, fly_time=fly_time, dt=fly_time / n, n_delay=n)

    @classmethod
    def from_length(cls, z0: float, length: float, velocity: float, samples_per_fly: int = 100) -> "CableParams":
        if not (length > 0 and velocity > 0):
            raise InvalidParameterError("cable length and velocity must be positive")
        return cls.from_fly_time(z0, length / velocity, samples_per_fly)

    @property
    def sample_rate(self) -> float:
        return 1.0 / self.dt


@dataclass(frozen=True)
class Termination:
    """A resistor in series with a voltage generator.

    `source` may carry leading batch dimensions; time runs along the last axis.
    """

    resistance: float
    source: np.ndarray

    def __post_init__(self):
        if not self.resistance > 0:
            raise InvalidParameterError(f"resistance must be positive, got {self.resistance!r}")


@dataclass(frozen=True)
class TraceSet:
    u_a: np.ndarray
    i_a: np.ndarray
    u_b: np.ndarray
    i_b: np.ndarray
    dt: float

    def __post_init__(self):
        shapes = {self.u_a.shape, self.i_a.shape, self.u_b.shape, self.i_b.shape}
        if len(shapes) != 1:
            raise InvalidParameterError(f"trace shapes differ: {sorted(shapes)}")

    def __len__(self) -> int:
        return self.u_a.shape[-1]

    @property
    def time(self) -> np.ndarray:
        return np.arange(len(self)) * self.dt

    def run(self, index) -> "TraceSet":
        """Select one run (or a sub-batch) from batched traces."""
        return TraceSet(self.u_a[index], self.i_a[index], self.u_b[index], self.i_b[index], self.dt)


def _check_sources(term_a: Termination, term_b: Termination, n_steps: int):
    if int(n_steps) != n_steps or n_steps < 1:
        raise InvalidParameterError(f"n_steps must be a positive integer, got {n_steps!r}")
    e_a = np.asarray(term_a.source, dtype=float)
    e_b = np.asarray(term_b.source, dtype=float)
    if e_a.shape[-1] < n_steps or e_b.shape[-1] < n_steps:
        raise InvalidParameterError(
            f"sources cover {e_a.shape[-1]} and {e_b.shape[-1]} samples, need {n_steps}"
        )
    try:
        batch = np.broadcast_shapes(e_a.shape[:-1], e_b.shape[:-1])
    except ValueError as exc:
        raise InvalidParameterError(f"source batch shapes do not match: {e_a.shape} vs {e_b.shape}") from exc
    e_a = np.broadcast_to(e_a[..., :n_steps], batch + (n_steps,))
    e_b = np.broadcast_to(e_b[..., :n_steps], batch + (n_steps,))
    return e_a, e_b


def simulate_loop(params: CableParams, term_a: Termination, term_b: Termination, n_steps: int) -> TraceSet:
    """Step the endpoint recursion for `n_steps` samples from a quiescent line.

    Per sample t, with n = params.n_delay::

        W_a(t) = u_b(t-n) + z0 i_b(t-n)          (zero for t < n)
        i_a(t) = (E_a(t) - W_a(t)) / (R_a + z0)
        u_a(t) = W_a(t) + z0 i_a(t)             (= E_a(t) - R_a i_a(t))

    and symmetrically at Bob's end. Since W only looks n samples back, whole
    blocks of n samples are computed at once. Writing u as W + z0 i keeps
    u == z0 * i bit-exactly before the first arrival.
    """
    e_a, e_b = _check_sources(term_a, term_b, n_steps)
    z0 = params.z0
    n = params.n_delay
    g_a = term_a.resistance + z0
    g_b = term_b.resistance + z0

    u_a = np.empty(e_a.shape)
    i_a = np.empty(e_a.shape)
    u_b = np.empty(e_a.shape)
    i_b = np.empty(e_a.shape)

    for start in range(0, n_steps, n):
        stop = min(start + n, n_steps)
        if start == 0:
            i_a[..., :stop] = e_a[..., :stop] / g_a
            i_b[..., :stop] = e_b[..., :stop] / g_b
            u_a[..., :stop] = z0 * i_a[..., :stop]
            u_b[..., :stop] = z0 * i_b[..., :stop]
            continue
        prev = slice(start - n, stop - n)
        cur = slice(start, stop)
        w_a = u_b[..., prev] + z0 * i_b[..., prev]
        w_b = u_a[..., prev] + z0 * i_a[..., prev]
        i_a[..., cur] = (e_a[..., cur] - w_a) / g_a
        i_b[..., cur] = (e_b[..., cur] - w_b) / g_b
        u_a[..., cur] = w_a + z0 * i_a[..., cur]
        u_b[..., cur] = w_b + z0 * i_b[..., cur]

    return TraceSet(u_a=u_a, i_a=i_a, u_b=u_b, i_b=i_b, dt=params.dt)


def simulate_loop_filtered(params: CableParams, term_a: Termination, term_b: Termination, n_steps: int) -> TraceSet:
    """Same model as :func:`simulate_loop`, solved as a linear recursive filter.

    With outgoing waves a = (u_a + z0 i_a)/2 and b = (u_b + z0 i_b)/2, each
    termination transmits z0/(R+z0) of its source and reflects (R-z0)/(R+z0)
    of the arriving wave, so a(t) obeys a recursion with lag 2n that
    `scipy.signal.lfilter` evaluates in compiled code. Used for long
    stationary runs; agrees with the step recursion to rounding error.
    """
    e_a, e_b = _check_sources(term_a, term_b, n_steps)
    z0 = params.z0
    n = params.n_delay
    r_a, r_b = term_a.resistance, term_b.resistance
    tx_a, tx_b = z0 / (r_a + z0), z0 / (r_b + z0)
    rf_a, rf_b = (r_a - z0) / (r_a + z0), (r_b - z0) / (r_b + z0)

    def delayed(x):
        out = np.zeros(x.shape)
        if n < x.shape[-1]:
            out[..., n:] = x[..., :-n]
        return out

    den = np.zeros(2 * n + 1)
    den[0] = 1.0
    den[-1] = -rf_a * rf_b
    # a(t) = tx_a E_a(t) + rf_a b(t-n),  b(t) = tx_b E_b(t) + rf_b a(t-n)
    a = lfilter([1.0], den, tx_a * e_a + rf_a * tx_b * delayed(e_b), axis=-1)
    b = lfilter([1.0], den, tx_b * e_b + rf_b * tx_a * delayed(e_a), axis=-1)
    w_a = 2.0 * delayed(b)
    w_b = 2.0 * delayed(a)
    i_a = (e_a - w_a) / (r_a + z0)
    i_b = (e_b - w_b) / (r_b + z0)
    return TraceSet(u_a=w_a + z0 * i_a, i_a=i_a, u_b=w_b + z0 * i_b, i_b=i_b, dt=params.dt)


def early_window_identity(traces: TraceSet, params: CableParams) -> bool:
    """True iff u == z0 * i holds exactly at both ends before the first arrival."""
    n = min(params.n_delay, len(traces))
    z0 = params.z0
    return bool(
        np.array_equal(traces.u_a[..., :n], z0 * traces.i_a[..., :n])
        and np.array_equal(traces.u_b[..., :n], z0 * traces.i_b[..., :n])
    )


def write_traces_csv(traces: TraceSet, path: str | Path) -> Path:
    """Dump a single-run trace set as CSV with round-trip float formatting."""
    if traces.u_a.ndim != 1:
        raise InvalidParameterError("trace dump expects a single run, select one with TraceSet.run()")
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t_s", "u_a_v", "i_a_a", "u_b_v", "i_b_a"])
        for k in range(len(traces)):
            writer.writerow(
                [
                    "%.17g" % (k * traces.dt),
                    "%.17g" % traces.u_a[k],
                    "%.17g" % traces.i_a[k],
                    "%.17g" % traces.u_b[k],
                    "%.17g" % traces.i_b[k],
                ]
            )
    return path


def stationary_moments(
    params: CableParams,
    r_a: float,
    r_b: float,
    rms_a: float,
    rms_b: float,
    bandwidth: float,
    n_bins: int = 4096,
) -> tuple[float, float, float]:
    """Expected (<u_a^2>, <i_a^2>, <u_a i_a>) for independent flat band-limited drives.

    Evaluates the endpoint transfer functions of the discrete model on a grid
    of `n_bins` frequencies spread evenly over (0, bandwidth]. As the line
    gets short compared with 1/bandwidth this tends to the lumped circuit.
    """
    if not (bandwidth > 0 and r_a > 0 and r_b > 0):
        raise InvalidParameterError("bandwidth and resistances must be positive")
    if not bandwidth < params.sample_rate / 2:
        raise InvalidParameterError("bandwidth must be below Nyquist")
    z0 = params.z0
    f = np.arange(1, n_bins + 1) * (bandwidth / n_bins)
    zn = np.exp(-2j * np.pi * f * params.dt * params.n_delay)
    tx_a, tx_b = z0 / (r_a + z0), z0 / (r_b + z0)
    rf_a, rf_b = (r_a - z0) / (r_a + z0), (r_b - z0) / (r_b + z0)
    den = 1.0 - rf_a * rf_b * zn * zn
    u2 = i2 = p = 0.0
    for e_a, e_b, power in ((1.0, 0.0, rms_a**2), (0.0, 1.0, rms_b**2)):
        b = (tx_b * e_b + rf_b * tx_a * zn * e_a) / den
        w_a = 2.0 * zn * b
        i_a = (e_a - w_a) / (r_a + z0)
        u_a = w_a + z0 * i_a
        u2 += power * np.mean(np.abs(u_a) ** 2)
        i2 += power * np.mean(np.abs(i_a) ** 2)
        p += power * np.mean((u_a * np.conj(i_a)).real)
    return float(u2), float(i2), float(p)
