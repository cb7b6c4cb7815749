"""Johnson-Nyquist conversions, the VMG temperature solver and lumped oracles.

Everything here is closed-form circuit algebra; the cable simulator in
:mod:`kljn_transient.wireline` is checked against these values.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

from .errors import InvalidParameterError, NonPhysicalConfigurationError

# CODATA 2018, exact by definition of the SI kelvin.
K_BOLTZMANN = 1.380649e-23


@dataclass(frozen=True)
class PhysicalConstants:
    k_boltzmann: float = K_BOLTZMANN


class LoopState(enum.Enum):
    """Which resistor each side has connected during a bit exchange period."""

    HL = "HL"  # Alice R_HA, Bob R_LB
    LH = "LH"  # Alice R_LA, Bob R_HB

    @property
    def other(self) -> "LoopState":
        return LoopState.LH if self is LoopState.HL else LoopState.HL


@dataclass(frozen=True)
class ResistorQuad:
    r_ha: float
    r_la: float
    r_hb: float
    r_lb: float

    def __post_init__(self):
        for name in ("r_ha", "r_la", "r_hb", "r_lb"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise InvalidParameterError(f"{name} must be positive and finite, got {value!r}")
        if self.r_ha == self.r_la or self.r_hb == self.r_lb:
            raise InvalidParameterError("H and L resistors must differ on each side")
        alice_ok = self.r_ha > self.r_la
        bob_ok = self.r_hb > self.r_lb
        if alice_ok != bob_ok:
            # u_hb^2 = U_LA^2 (R_HA+R_HB)(R_HB-R_LB) / ((R_HA-R_LA)(R_LA+R_LB)) and its
            # siblings change sign when exactly one side is out of order
            raise NonPhysicalConfigurationError(
                f"R_HA={self.r_ha:g} vs R_LA={self.r_la:g} and R_HB={self.r_hb:g} vs R_LB={self.r_lb:g}: "
                "with H above L on only one side the VMG squared amplitudes are negative"
            )
        if not alice_ok:
            raise InvalidParameterError("r_ha must exceed r_la and r_hb must exceed r_lb (H and L look swapped)")

    def loop(self, state: LoopState) -> tuple[float, float]:
        """Return (Alice resistance, Bob resistance) for `state`."""
        if state is LoopState.HL:
            return self.r_ha, self.r_lb
        return self.r_la, self.r_hb


@dataclass(frozen=True)
class NoiseTemperatures:
    t_ha: float
    t_la: float
    t_hb: float
    t_lb: float
    u_ha: float
    u_la: float
    u_hb: float
    u_lb: float
    bandwidth: float

    def loop(self, state: LoopState) -> tuple[float, float]:
        """Return (Alice generator RMS, Bob generator RMS) for `state`."""
        if state is LoopState.HL:
            return self.u_ha, self.u_lb
        return self.u_la, self.u_hb

    def role_rms(self) -> dict[str, float]:
        return {"HA": self.u_ha, "LA": self.u_la, "HB": self.u_hb, "LB": self.u_lb}


@dataclass(frozen=True)
class SteadyStateObservables:
    u_ms: float
    i_ms: float
    p_flow: float
    r_parallel: float
    r_serial: float

    def spectra(self, bandwidth: float) -> tuple[float, float]:
        """In-band voltage and current spectral densities (V^2/Hz, A^2/Hz)."""
        return self.u_ms / bandwidth, self.i_ms / bandwidth


def rms_from_temperature(t: float, r: float, b: float, k: float = K_BOLTZMANN) -> float:
    """RMS voltage of a Johnson-Nyquist generator, sqrt(4 k T R B)."""
    if not r > 0:
        raise InvalidParameterError(f"resistance must be positive, got {r!r}")
    if not b > 0:
        raise InvalidParameterError(f"bandwidth must be positive, got {b!r}")
    if t < 0:
        raise InvalidParameterError(f"temperature must be non-negative, got {t!r}")
    return math.sqrt(4.0 * k * t * r * b)


def temperature_from_rms(u: float, r: float, b: float, k: float = K_BOLTZMANN) -> float:
    """Noise temperature that makes a resistor `r` produce RMS voltage `u` in band `b`."""
    if not r > 0:
        raise InvalidParameterError(f"resistance must be positive, got {r!r}")
    if not b > 0:
        raise InvalidParameterError(f"bandwidth must be positive, got {b!r}")
    return u * u / (4.0 * k * r * b)


def vmg_squared_amplitudes(quad: ResistorQuad, u_la: float) -> tuple[float, float, float]:
    """Squared RMS amplitudes (u_hb^2, u_ha^2, u_lb^2) that balance HL against LH.

    Direct transcription of the VMG equations with U_LA as the free reference.
    No positivity check; see :func:`solve_vmg`.
    """
    ha, la, hb, lb = quad.r_ha, quad.r_la, quad.r_hb, quad.r_lb
    u2 = u_la * u_la
    u_hb2 = u2 * (lb * (ha + hb) - ha * hb - hb * hb) / (la * la + lb * (la - ha) - ha * la)
    u_ha2 = u2 * (lb * (ha + hb) + ha * hb + ha * ha) / (la * la + lb * (la + hb) + hb * la)
    u_lb2 = u2 * (lb * (ha - hb) - ha * hb + lb * lb) / (la * la + la * (hb - ha) - ha * hb)
    return u_hb2, u_ha2, u_lb2


def solve_vmg(quad: ResistorQuad, u_la: float, b: float, k: float = K_BOLTZMANN) -> NoiseTemperatures:
    """Solve the noise temperatures of all four resistors.

    Raises
    ------
    NonPhysicalConfigurationError
        If any squared amplitude is not strictly positive (or not finite).
    """
    if not u_la > 0:
        raise InvalidParameterError(f"u_la must be positive, got {u_la!r}")
    if not b > 0:
        raise InvalidParameterError(f"bandwidth must be positive, got {b!r}")
    squares = dict(zip(("u_hb", "u_ha", "u_lb"), vmg_squared_amplitudes(quad, u_la)))
    for name, value in squares.items():
        if not (math.isfinite(value) and value > 0):
            raise NonPhysicalConfigurationError(
                f"{name}^2 = {value!r} V^2 is not positive for resistors "
                f"R_HA={quad.r_ha:g}, R_LA={quad.r_la:g}, R_HB={quad.r_hb:g}, R_LB={quad.r_lb:g}"
            )
    u_ha = math.sqrt(squares["u_ha"])
    u_hb = math.sqrt(squares["u_hb"])
    u_lb = math.sqrt(squares["u_lb"])
    return NoiseTemperatures(
        t_ha=temperature_from_rms(u_ha, quad.r_ha, b, k),
        t_la=temperature_from_rms(u_la, quad.r_la, b, k),
        t_hb=temperature_from_rms(u_hb, quad.r_hb, b, k),
        t_lb=temperature_from_rms(u_lb, quad.r_lb, b, k),
        u_ha=u_ha,
        u_la=u_la,
        u_hb=u_hb,
        u_lb=u_lb,
        bandwidth=b,
    )


def resultant_resistances(r_a: float, r_b: float) -> tuple[float, float]:
    if not (r_a > 0 and r_b > 0):
        raise InvalidParameterError(f"resistances must be positive, got {r_a!r}, {r_b!r}")
    return r_a * r_b / (r_a + r_b), r_a + r_b


def lumped_observables(u_a: float, u_b: float, r_a: float, r_b: float) -> SteadyStateObservables:
    """Zero-length wire driven by two independent generators behind r_a and r_b.

    `p_flow` is the mean power leaving Alice's branch into the wire; negative
    means net flow from Bob to Alice.
    """
    r_p, r_s = resultant_resistances(r_a, r_b)
    ua2, ub2 = u_a * u_a, u_b * u_b
    denom = r_s * r_s
    return SteadyStateObservables(
        u_ms=(ua2 * r_b * r_b + ub2 * r_a * r_a) / denom,
        i_ms=(ua2 + ub2) / denom,
        p_flow=(ua2 * r_b - ub2 * r_a) / denom,
        r_parallel=r_p,
        r_serial=r_s,
    )


def steady_state_observables(state: LoopState, quad: ResistorQuad, temps: NoiseTemperatures) -> SteadyStateObservables:
    r_a, r_b = quad.loop(state)
    u_a, u_b = temps.loop(state)
    return lumped_observables(u_a, u_b, r_a, r_b)
