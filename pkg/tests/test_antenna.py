import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cograte.antenna import (base_pattern, build_geometry, pattern_gain,
                             sector_of)

DEG = math.pi / 180.0


def test_peak_gain_is_one_with_reference_constants(antenna7):
    for m in range(7):
        assert pattern_gain(antenna7.kappa[m], m, antenna7) == \
            pytest.approx(1.0, abs=1e-15)


def test_half_power_offset(antenna7):
    m = 3
    g = pattern_gain(antenna7.kappa[m] + antenna7.phi3dB, m, antenna7)
    assert g == pytest.approx(0.02 + 0.98 / 2, abs=1e-15)


@given(st.floats(-10, 10), st.integers(0, 6))
def test_periodic_in_angle(phi, m):
    ant = build_geometry(7, -55 * DEG, 55 * DEG)
    assert pattern_gain(phi + 2 * math.pi, m, ant) == \
        pytest.approx(pattern_gain(phi, m, ant), abs=1e-12)


@given(st.floats(-10, 10))
def test_gain_bounded_by_constants(phi):
    ant = build_geometry(7, -55 * DEG, 55 * DEG)
    g = base_pattern(phi, ant)
    assert ant.A1 - 1e-15 <= g <= ant.A1 + ant.A0 + 1e-15


def test_bad_beam_index(antenna7):
    with pytest.raises(IndexError):
        pattern_gain(0.0, 7, antenna7)
    with pytest.raises(IndexError):
        pattern_gain(0.0, -1, antenna7)


def test_single_beam_full_circle():
    ant = build_geometry(1, -math.pi, math.pi)
    assert ant.kappa == (0.0,)
    assert ant.sectors == ((-math.pi, math.pi),)


def test_seven_equal_sectors(antenna7):
    widths = [hi - lo for lo, hi in antenna7.sectors]
    assert np.allclose(widths, 110 * DEG / 7, atol=1e-15)
    assert math.fsum(widths) == pytest.approx(110 * DEG, abs=1e-14)


def test_two_beams_on_circle():
    ant = build_geometry(2, 0.0, 2 * math.pi)
    assert np.allclose(ant.kappa, [math.pi / 2, 3 * math.pi / 2])


def test_invalid_geometry():
    with pytest.raises(ValueError):
        build_geometry(0, 0.0, 1.0)
    with pytest.raises(ValueError):
        build_geometry(3, 1.0, 1.0)


@given(st.floats(-55 * DEG, 55 * DEG, exclude_max=True))
def test_sector_of_contains_angle(phi):
    ant = build_geometry(7, -55 * DEG, 55 * DEG)
    i = int(sector_of(phi, ant))
    lo, hi = ant.sectors[i]
    assert lo <= phi < hi


def test_gain_matrix_symmetric(antenna7):
    G = antenna7.gain_matrix()
    assert np.allclose(G, G.T)
    assert np.allclose(np.diag(G), 1.0)
