"""Ray-tracer output and channel statistics containers."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

__all__ = ["PathKind", "MultipathComponent", "ChannelImpulseResponse", "PowerDelayProfile"]


class PathKind(str, Enum):
    LOS = "LOS"
    REFLECTED = "reflected"
    SCATTERED = "scattered"


@dataclass(frozen=True)
class MultipathComponent:
    """
    One propagation path.

    ``amplitude`` is the complex baseband gain a*exp(j*psi) for isotropic
    0 dBi antennas; |amplitude|^2 is the linear power gain between the antenna
    ports, so with 0 dBm transmit power 10*log10(|a|^2) is the RSS in dBm.
    """

    delay: float
    amplitude: complex
    interaction_count: int
    kind: PathKind
    faces: tuple[int, ...] = ()

    @property
    def power(self) -> float:
        return abs(self.amplitude) ** 2


@dataclass(frozen=True)
class ChannelImpulseResponse:
    delay_grid: np.ndarray
    taps: np.ndarray
    bandwidth_hz: float
    oversample_factor: int

    @property
    def spacing(self) -> float:
        return 1.0 / (self.oversample_factor * self.bandwidth_hz)

    def power(self) -> np.ndarray:
        return np.abs(self.taps) ** 2


@dataclass(frozen=True)
class PowerDelayProfile:
    """
    Linear power per delay bin, normalized to 0 dBm transmit power.

    Profiles averaged from CIRs sit on the CIR lattice. Impulse profiles
    (``uniform_grid=False``) hold one bin per MPC at its exact delay, so
    their grid is sorted but irregular; only the moment statistics take them.
    """

    delay_grid: np.ndarray
    power: np.ndarray
    n_realizations_averaged: int = 1
    uniform_grid: bool = True
