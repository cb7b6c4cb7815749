"""Eve's mean-square comparison attack on the opening transient."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError
from .vmg import LoopState
from .wireline import TraceSet


class Channel(enum.Enum):
    VOLTAGE = "voltage"
    CURRENT = "current"


@dataclass(frozen=True)
class ObservationWindow:
    tau: float
    n_samples: int

    def __post_init__(self):
        if int(self.n_samples) != self.n_samples or self.n_samples < 1:
            raise InvalidParameterError(f"window must hold at least one sample, got {self.n_samples!r}")

    @classmethod
    def from_tau(cls, tau: float, dt: float) -> "ObservationWindow":
        n = int(round(tau / dt))
        return cls(tau=n * dt, n_samples=n)


@dataclass(frozen=True)
class MeanSquares:
    msv_a: float
    msv_b: float
    msi_a: float
    msi_b: float

    def scaled(self, c: float) -> "MeanSquares":
        return MeanSquares(self.msv_a * c, self.msv_b * c, self.msi_a * c, self.msi_b * c)


@dataclass(frozen=True)
class Decision:
    channel: Channel
    guess: LoopState
    tie_broken: bool


def mean_squares(traces: TraceSet, window: ObservationWindow) -> MeanSquares:
    """Window averages of the squared endpoint traces, starting at index 0.

    Batched traces give array-valued fields, one entry per run.
    """
    n = window.n_samples
    if n > len(traces):
        raise InvalidParameterError(f"window of {n} samples exceeds traces of {len(traces)}")

    def ms(x):
        return np.mean(np.square(x[..., :n]), axis=-1)

    return MeanSquares(ms(traces.u_a), ms(traces.u_b), ms(traces.i_a), ms(traces.i_b))


def decide(ms: MeanSquares, channel: Channel, rng: np.random.Generator) -> Decision:
    """The end with the larger mean square is taken to hold the lower resistance.

    Alice larger means Alice is L, i.e. LH. Exact ties are settled by a fair coin.
    """
    if channel is Channel.VOLTAGE:
        a, b = ms.msv_a, ms.msv_b
    else:
        a, b = ms.msi_a, ms.msi_b
    if a > b:
        return Decision(channel, LoopState.LH, False)
    if a < b:
        return Decision(channel, LoopState.HL, False)
    guess = LoopState.HL if rng.random() < 0.5 else LoopState.LH
    return Decision(channel, guess, True)


def score(decision: Decision, truth: LoopState) -> bool:
    return decision.guess is truth
