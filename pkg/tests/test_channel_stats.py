import math

import numpy as np
import pytest

from app.core.errors import EmptyInputError, GridMismatchError, ParameterRangeError, ZeroPowerError
from app.schemas.channel import MultipathComponent, PathKind, PowerDelayProfile
from app.schemas.foliage_schema import ChannelConfig
from app.services.channel_stats import (
    average_pdp,
    empirical_cdf,
    gated_power_dbm,
    impulse_pdp,
    path_loss,
    rms_delay_spread,
    shape_cir,
    summarize,
)
from app.services.ray_engine import free_space_amplitude

B = 2e9
NS = 1e-9


def _mpc(delay: float, amplitude: complex = 1.0) -> MultipathComponent:
    return MultipathComponent(delay=delay, amplitude=complex(amplitude), interaction_count=1, kind=PathKind.SCATTERED)


def _pdp(delays_ns, powers) -> PowerDelayProfile:
    return PowerDelayProfile(np.asarray(delays_ns, dtype=float) * NS, np.asarray(powers, dtype=float))


def test_single_mpc_peak_sits_on_its_delay():
    cir = shape_cir([_mpc(100 * NS)], B, 8)
    k = int(np.argmin(np.abs(cir.delay_grid - 100 * NS)))

    assert abs(cir.taps[k]) >= 0.995
    assert np.argmax(np.abs(cir.taps)) == k


def test_grid_spacing_and_span():
    cir = shape_cir([_mpc(100 * NS), _mpc(130 * NS)], B, 8)
    steps = np.diff(cir.delay_grid)

    assert cir.spacing == pytest.approx(0.0625 * NS)
    assert np.allclose(steps, cir.spacing, rtol=1e-9)
    assert cir.delay_grid[0] <= min(0.95 * 100 * NS, 100 * NS - 16 / B)
    assert cir.delay_grid[-1] >= 130 * NS + 16 / B
    # Grid points are integer multiples of the spacing.
    ratios = cir.delay_grid / cir.spacing
    assert np.allclose(ratios, np.round(ratios), atol=1e-6)


def test_single_mpc_band_limited_energy():
    cir = shape_cir([_mpc(100 * NS)], B, 8)
    energy = float(np.sum(cir.power()) * cir.spacing * B)

    assert energy == pytest.approx(1.0, abs=0.01)


def test_taps_one_bandwidth_apart_do_not_interfere():
    cir = shape_cir([_mpc(100 * NS, 1.0), _mpc(100 * NS + 1 / B, 0.7)], B, 8)
    first = int(np.argmin(np.abs(cir.delay_grid - 100 * NS)))
    second = int(np.argmin(np.abs(cir.delay_grid - (100 * NS + 1 / B))))

    assert abs(cir.taps[first] - 1.0) < 1e-6
    assert abs(cir.taps[second] - 0.7) < 1e-6


def test_shape_cir_rejects_bad_input():
    with pytest.raises(EmptyInputError):
        shape_cir([], B, 8)
    with pytest.raises(ParameterRangeError):
        shape_cir([_mpc(1 * NS)], B, 1)
    with pytest.raises(ParameterRangeError):
        shape_cir([_mpc(1 * NS)], 0.0, 8)


def test_average_single_cir_is_its_power():
    cir = shape_cir([_mpc(50 * NS, 0.3 + 0.4j), _mpc(57 * NS, -0.2j)], B, 8)
    pdp = average_pdp([cir])

    assert np.array_equal(pdp.power, cir.power())
    assert np.array_equal(pdp.delay_grid, cir.delay_grid)
    assert pdp.n_realizations_averaged == 1


def test_average_of_copies_is_idempotent():
    cir = shape_cir([_mpc(80 * NS, 0.5)], B, 8)
    assert np.allclose(average_pdp([cir, cir, cir]).power, cir.power(), rtol=1e-14)


def test_average_is_arithmetic_mean():
    a = shape_cir([_mpc(100 * NS, 1.0)], B, 8)
    b = shape_cir([_mpc(100 * NS, math.sqrt(3.0))], B, 8)

    assert average_pdp([a, b]).power.max() == pytest.approx(2.0, rel=1e-12)


def test_average_pads_onto_union_grid_and_ignores_order():
    a = shape_cir([_mpc(100 * NS, 1.0)], B, 8)
    b = shape_cir([_mpc(140 * NS, 0.5j)], B, 8)
    c = shape_cir([_mpc(120 * NS, 0.8)], B, 8)

    forward = average_pdp([a, b, c])
    backward = average_pdp([c, b, a])

    assert forward.delay_grid[0] == pytest.approx(a.delay_grid[0])
    assert forward.delay_grid[-1] == pytest.approx(b.delay_grid[-1])
    assert np.allclose(forward.power, backward.power, rtol=1e-12, atol=0.0)
    assert forward.n_realizations_averaged == 3


def test_average_rejects_mismatched_grids():
    with pytest.raises(GridMismatchError):
        average_pdp([shape_cir([_mpc(10 * NS)], B, 8), shape_cir([_mpc(10 * NS)], 1e9, 8)])
    with pytest.raises(EmptyInputError):
        average_pdp([])


def test_rms_single_tap_is_zero():
    assert rms_delay_spread(_pdp([42.0], [1.0])) == 0.0


def test_rms_two_equal_taps():
    assert rms_delay_spread(_pdp([0.0, 10.0], [1.0, 1.0])) == pytest.approx(5.0 * NS, rel=1e-12)


def test_rms_three_taps():
    # mean 12.5 ns, variance 68.75 ns^2
    assert rms_delay_spread(_pdp([0.0, 10.0, 20.0], [1.0, 1.0, 2.0])) == pytest.approx(math.sqrt(68.75) * NS, rel=1e-9)


@pytest.mark.parametrize("separation_ns", [0.1, 1.0, 3.7, 25.0, 400.0])
def test_rms_equal_taps_is_half_separation(separation_ns):
    pdp = _pdp([100.0, 100.0 + separation_ns], [0.25, 0.25])
    assert rms_delay_spread(pdp) == pytest.approx(separation_ns * NS / 2, rel=1e-9)


def test_rms_scale_and_translation_invariance():
    rng = np.random.default_rng(0)
    delays = np.sort(rng.uniform(0.0, 50.0, 30))
    powers = rng.uniform(0.1, 1.0, 30)
    base = rms_delay_spread(_pdp(delays, powers))

    assert rms_delay_spread(_pdp(delays, 7.3 * powers)) == pytest.approx(base, rel=1e-12)
    assert rms_delay_spread(_pdp(delays + 37.0, powers)) == pytest.approx(base, rel=1e-12)


def test_rms_noise_gate_drops_weak_taps():
    pdp = _pdp([0.0, 30.0], [1.0, 1e-4])

    assert rms_delay_spread(pdp, threshold_db=30.0) == 0.0
    assert rms_delay_spread(pdp, threshold_db=50.0) > 0.0


def test_rms_errors():
    with pytest.raises(ZeroPowerError):
        rms_delay_spread(_pdp([0.0, 1.0], [0.0, 0.0]))
    with pytest.raises(EmptyInputError):
        rms_delay_spread(_pdp([], []))
    with pytest.raises(ParameterRangeError):
        rms_delay_spread(_pdp([0.0], [1.0]), threshold_db=0.0)


def test_path_loss_reference_values():
    assert path_loss([_mpc(1 * NS, 1.0)]) == pytest.approx((0.0, 0.0), abs=1e-12)
    half = math.sqrt(0.5)
    assert path_loss([_mpc(1 * NS, half), _mpc(2 * NS, 1j * half)])[0] == pytest.approx(0.0, abs=1e-12)

    free_space = free_space_amplitude(30.0, 80e9)
    rss, pl = path_loss([_mpc(100 * NS, free_space)])
    assert pl == pytest.approx(100.05, abs=0.01)
    assert rss == pytest.approx(-pl)


def test_path_loss_errors():
    with pytest.raises(EmptyInputError):
        path_loss([])
    with pytest.raises(ZeroPowerError):
        path_loss([_mpc(1 * NS, 0.0)])


def test_path_loss_from_cir_agrees_with_mpcs():
    rng = np.random.default_rng(5)
    # Delays on sinc zero crossings of each other keep the taps orthogonal.
    delays = 100 * NS + np.arange(0, 40, 2) / B
    amps = rng.uniform(0.2, 1.0, len(delays)) * np.exp(1j * rng.uniform(0, 2 * np.pi, len(delays)))
    mpcs = [_mpc(d, a) for d, a in zip(delays, amps)]

    _, pl_mpc = path_loss(mpcs)
    _, pl_cir = path_loss(shape_cir(mpcs, B, 8))
    assert abs(pl_mpc - pl_cir) < 0.05


def test_empirical_cdf_reference_values():
    assert empirical_cdf([5.0]) == [(5.0, 1.0)]
    assert empirical_cdf([3.0, 1.0, 4.0, 2.0]) == [(1.0, 0.25), (2.0, 0.5), (3.0, 0.75), (4.0, 1.0)]
    assert empirical_cdf([2.0, 2.0, 1.0]) == [(1.0, pytest.approx(1 / 3)), (2.0, 1.0)]


def test_empirical_cdf_is_monotone():
    values = np.random.default_rng(1).normal(size=500)
    cdf = empirical_cdf(values)
    xs = [x for x, _ in cdf]
    ps = [p for _, p in cdf]

    assert xs == sorted(xs)
    assert all(b >= a for a, b in zip(ps, ps[1:]))
    assert ps[-1] == 1.0


def test_empirical_cdf_errors():
    with pytest.raises(EmptyInputError):
        empirical_cdf([])
    with pytest.raises(ParameterRangeError):
        empirical_cdf([1.0, float("nan")])


def test_gated_power_keeps_bins_near_peak():
    kept = gated_power_dbm(np.array([1.0, 1e-2, 1e-4, 0.0]), threshold_db=30.0)
    assert kept.tolist() == pytest.approx([0.0, -20.0])


def test_impulse_pdp_orders_by_delay():
    pdp = impulse_pdp([_mpc(20 * NS, 0.5), _mpc(10 * NS, 1.0)])

    assert pdp.delay_grid.tolist() == [10 * NS, 20 * NS]
    assert pdp.power.tolist() == pytest.approx([1.0, 0.25])


def test_impulse_pdp_is_flagged_irregular_and_still_gives_moments():
    mpcs = [_mpc(120 * NS, math.sqrt(2.0)), _mpc(100 * NS, 1.0), _mpc(110 * NS, 1.0)]
    pdp = impulse_pdp(mpcs)

    assert not pdp.uniform_grid
    assert average_pdp([shape_cir(mpcs, B, 8)]).uniform_grid
    # mean 12.5 ns, variance 68.75 ns^2
    assert rms_delay_spread(pdp) == pytest.approx(math.sqrt(68.75) * NS, rel=1e-9)


def test_summarize_free_space():
    summary = summarize([_mpc(30.0 / 299_792_458.0, free_space_amplitude(30.0, 80e9))], ChannelConfig())

    assert summary["n_mpcs"] == 1
    assert summary["drms_ns"] == 0.0
    assert summary["drms_bandlimited_ns"] < 1.5
    assert summary["pl_db"] == pytest.approx(100.05, abs=0.01)
