"""Transient attack and slope-matching defense on a VMG-KLJN key exchanger.

Modules
-------
vmg         noise temperatures from the resistor quad, lumped steady-state oracles
noise       band-limited noise records, start-point candidates, the record database
wireline    lossless cable between two noisy resistors, endpoint traces
attack      Eve's mean-square comparison over the opening window
montecarlo  seeded Monte Carlo scenarios, table reproduction, steady-state check
cli         command-line front end
"""

from .errors import (
    InvalidParameterError,
    InvalidSpecError,
    NonPhysicalConfigurationError,
    PairingExhaustedError,
)
from .vmg import LoopState, NoiseTemperatures, ResistorQuad, solve_vmg

__all__ = [
    "InvalidParameterError",
    "InvalidSpecError",
    "LoopState",
    "NoiseTemperatures",
    "NonPhysicalConfigurationError",
    "PairingExhaustedError",
    "ResistorQuad",
    "solve_vmg",
]
