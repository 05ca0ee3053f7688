"""
Channel statistics: band-limited CIR, averaged PDP, RMS delay spread, path
loss and empirical CDFs.

Delay grids are integer multiples of 1 / (oversample * bandwidth), so CIRs of
the same bandwidth always share one lattice and averaging only zero-pads.
"""

from __future__ import annotations

import math
from typing import Sequence, Union

import numpy as np
import pandas as pd

from app.core.errors import EmptyInputError, GridMismatchError, ParameterRangeError, ZeroPowerError
from app.schemas.channel import ChannelImpulseResponse, MultipathComponent, PowerDelayProfile
from app.schemas.foliage_schema import ChannelConfig

__all__ = [
    "GRID_MARGIN_BANDWIDTHS",
    "shape_cir",
    "average_pdp",
    "impulse_pdp",
    "rms_delay_spread",
    "path_loss",
    "empirical_cdf",
    "gated_power_dbm",
    "summarize",
    "cir_to_frame",
    "pdp_to_frame",
    "cdf_to_frame",
]

GRID_MARGIN_BANDWIDTHS = 16  # grid extends 16 / B past the extreme delays
GRID_TOL = 1e-15  # s
_SAMPLES_PER_CHUNK = 2_000_000


def shape_cir(mpcs: Sequence[MultipathComponent], bandwidth_hz: float, oversample: int = 8) -> ChannelImpulseResponse:
    """
    Sinc pulse shaping: h(tau_k) = sum_m a_m sinc(B (tau_k - tau_m)).

    The grid covers [min(0.95 tau_min, tau_min - 16/B), tau_max + 16/B],
    snapped outward to multiples of the tap spacing.
    """
    if not mpcs:
        raise EmptyInputError("shape_cir needs at least one multipath component")
    if not bandwidth_hz > 0:
        raise ParameterRangeError("bandwidth_hz", f"must be > 0, got {bandwidth_hz}")
    if oversample < 2:
        raise ParameterRangeError("oversample", f"must be >= 2, got {oversample}")

    delays = np.array([m.delay for m in mpcs], dtype=np.float64)
    amps = np.array([m.amplitude for m in mpcs], dtype=np.complex128)
    spacing = 1.0 / (oversample * bandwidth_hz)
    margin = GRID_MARGIN_BANDWIDTHS / bandwidth_hz
    lo = min(0.95 * delays.min(), delays.min() - margin)
    hi = delays.max() + margin
    k0 = math.floor(lo / spacing)
    k1 = math.ceil(hi / spacing)
    grid = np.arange(k0, k1 + 1, dtype=np.float64) * spacing

    taps = np.zeros(len(grid), dtype=np.complex128)
    step = max(1, _SAMPLES_PER_CHUNK // len(grid))
    for s in range(0, len(delays), step):
        kernel = np.sinc(bandwidth_hz * (grid[None, :] - delays[s : s + step, None]))
        taps += (amps[s : s + step, None] * kernel).sum(axis=0)
    return ChannelImpulseResponse(delay_grid=grid, taps=taps, bandwidth_hz=bandwidth_hz, oversample_factor=oversample)


def _lattice_index(cir: ChannelImpulseResponse, spacing: float) -> int:
    k = int(round(cir.delay_grid[0] / spacing))
    if abs(cir.delay_grid[0] - k * spacing) > GRID_TOL:
        raise GridMismatchError(f"grid start {cir.delay_grid[0]!r} s is off the {spacing!r} s lattice")
    return k


def average_pdp(cirs: Sequence[ChannelImpulseResponse]) -> PowerDelayProfile:
    """P(tau_k) = mean_r |h_r(tau_k)|^2 on the union of the input grids."""
    if not cirs:
        raise EmptyInputError("average_pdp needs at least one CIR")
    spacing = cirs[0].spacing
    for cir in cirs[1:]:
        if abs(cir.spacing - spacing) > GRID_TOL:
            raise GridMismatchError(f"tap spacing {cir.spacing!r} s differs from {spacing!r} s")

    starts = [_lattice_index(cir, spacing) for cir in cirs]
    k_lo = min(starts)
    k_hi = max(k + len(cir.taps) - 1 for k, cir in zip(starts, cirs))
    power = np.zeros(k_hi - k_lo + 1)
    for k, cir in zip(starts, cirs):
        power[k - k_lo : k - k_lo + len(cir.taps)] += cir.power()
    power /= len(cirs)
    grid = np.arange(k_lo, k_hi + 1, dtype=np.float64) * spacing
    return PowerDelayProfile(delay_grid=grid, power=power, n_realizations_averaged=len(cirs))


def impulse_pdp(mpcs: Sequence[MultipathComponent]) -> PowerDelayProfile:
    """Unshaped PDP: each MPC's power at its exact delay."""
    if not mpcs:
        raise EmptyInputError("impulse_pdp needs at least one multipath component")
    ordered = sorted(mpcs, key=lambda m: m.delay)
    return PowerDelayProfile(
        delay_grid=np.array([m.delay for m in ordered], dtype=np.float64),
        power=np.array([m.power for m in ordered], dtype=np.float64),
        uniform_grid=False,
    )


def rms_delay_spread(pdp: PowerDelayProfile, threshold_db: float = 30.0) -> float:
    """
    Second central moment of the PDP after the noise gate, in seconds.

    Bins more than ``threshold_db`` below the peak are zeroed first.
    """
    power = np.asarray(pdp.power, dtype=np.float64)
    if power.size == 0:
        raise EmptyInputError("PDP is empty")
    if not threshold_db > 0:
        raise ParameterRangeError("threshold_db", f"must be > 0, got {threshold_db}")
    peak = power.max()
    if not peak > 0:
        raise ZeroPowerError("PDP carries no power")

    gated = np.where(power >= peak * 10.0 ** (-threshold_db / 10.0), power, 0.0)
    total = gated.sum()
    # Moments about the first gated delay; the result is translation invariant.
    tau = np.asarray(pdp.delay_grid, dtype=np.float64)
    tau = tau - tau[np.flatnonzero(gated)[0]]
    mean = (tau * gated).sum() / total
    var = (((tau - mean) ** 2) * gated).sum() / total
    return float(math.sqrt(max(var, 0.0)))


def path_loss(source: Union[Sequence[MultipathComponent], ChannelImpulseResponse]) -> tuple[float, float]:
    """
    (rss_dbm, pl_db) for 0 dBm transmit power.

    From MPCs the received power is sum |a_m|^2; from a CIR it is the
    band-limited energy sum |h_k|^2 * dtau * B.
    """
    if isinstance(source, ChannelImpulseResponse):
        if len(source.taps) == 0:
            raise EmptyInputError("CIR is empty")
        total = float(source.power().sum()) / source.oversample_factor
    else:
        if not source:
            raise EmptyInputError("no multipath components")
        total = float(sum(m.power for m in source))
    if not total > 0:
        raise ZeroPowerError("received power is zero")
    rss_dbm = 10.0 * math.log10(total)
    return rss_dbm, -rss_dbm


def empirical_cdf(values: Sequence[float]) -> list[tuple[float, float]]:
    """Right-continuous empirical CDF: (x, #{v <= x} / n) at each distinct x."""
    arr = np.asarray(values, dtype=np.float64).ravel()
    if arr.size == 0:
        raise EmptyInputError("empirical_cdf needs at least one value")
    if not np.all(np.isfinite(arr)):
        raise ParameterRangeError("values", "must all be finite")
    uniq, counts = np.unique(arr, return_counts=True)
    cum = np.cumsum(counts)
    return [(float(x), float(c) / arr.size) for x, c in zip(uniq, cum)]


def gated_power_dbm(power: np.ndarray, threshold_db: float) -> np.ndarray:
    """Per-bin powers in dBm that lie within ``threshold_db`` of the peak."""
    power = np.asarray(power, dtype=np.float64)
    if power.size == 0 or not power.max() > 0:
        raise ZeroPowerError("no power to gate")
    kept = power[power >= power.max() * 10.0 ** (-threshold_db / 10.0)]
    return 10.0 * np.log10(kept)


def summarize(mpcs: Sequence[MultipathComponent], channel: ChannelConfig) -> dict:
    """Per-run figures: RSS/PL, impulse-level and band-limited D_RMS, MPC count."""
    rss_dbm, pl_db = path_loss(mpcs)
    cir = shape_cir(mpcs, channel.bandwidth_hz, channel.oversample)
    return {
        "rss_dbm": rss_dbm,
        "pl_db": pl_db,
        "drms_ns": rms_delay_spread(impulse_pdp(mpcs), channel.threshold_db) * 1e9,
        "drms_bandlimited_ns": rms_delay_spread(average_pdp([cir]), channel.threshold_db) * 1e9,
        "n_mpcs": len(mpcs),
    }


def cir_to_frame(cir: ChannelImpulseResponse) -> pd.DataFrame:
    return pd.DataFrame({"delay_ns": cir.delay_grid * 1e9, "re": cir.taps.real, "im": cir.taps.imag})


def pdp_to_frame(pdp: PowerDelayProfile) -> pd.DataFrame:
    with np.errstate(divide="ignore"):
        dbm = np.where(pdp.power > 0, 10.0 * np.log10(pdp.power), np.nan)
    return pd.DataFrame({"delay_ns": pdp.delay_grid * 1e9, "power_linear": pdp.power, "power_dbm": dbm})


def cdf_to_frame(cdf: list[tuple[float, float]]) -> pd.DataFrame:
    return pd.DataFrame(cdf, columns=["value_dbm", "probability"])
