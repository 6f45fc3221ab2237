from dataclasses import replace
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cograte.beam_detect import (BeamErrorMatrix, delta_bar_matrix,
                                 delta_given_phi, delta_vector, energy_stats)
from cograte.sensing import SensingConfig, calibrate_threshold

from conftest import cn

DEG = math.pi / 180


@pytest.fixture(scope="module")
def sensed(antenna7):
    cfg = SensingConfig(N_se=500)
    return cfg, calibrate_threshold(cfg, antenna7)


@given(st.floats(-55 * DEG, 55 * DEG))
@settings(max_examples=30, deadline=None)
def test_detection_outcomes_partition(phi):
    from cograte.antenna import build_geometry
    ant = build_geometry(7, -55 * DEG, 55 * DEG)
    cfg = SensingConfig(N_se=300)
    s = calibrate_threshold(cfg, ant) if not _CACHE else _CACHE[0]
    _CACHE[:] = [s]
    d = delta_vector(phi, s, cfg, ant)
    assert math.fsum(d) == pytest.approx(1.0, abs=1e-8)
    assert np.all(d >= 0)


_CACHE = []


def test_pure_false_alarm_is_uniform(antenna7, sensed):
    cfg, s = sensed
    s0 = replace(s, sigma0=1.0, sigma1=0.0)
    d = delta_vector(0.3, s0, cfg, antenna7)
    assert np.allclose(d, 1 / 7, atol=1e-12)


def _faded_samples(rng, shape, var_psi, P_p, sigma_w2):
    """``psi(n) s(n) + w(n)`` with independent fading and symbol draws."""
    return (cn(rng, shape, var_psi) * cn(rng, shape, P_p)
            + cn(rng, shape, sigma_w2))


def test_energy_moments_match_sample_model(antenna7):
    cfg = SensingConfig(N_se=50)
    st_ = energy_stats(antenna7.kappa[2], cfg, antenna7)
    rng = np.random.default_rng(3)
    n = 200_000
    y = _faded_samples(rng, (n, 50), cfg.gamma * 1.0, cfg.P_p, cfg.sigma_w2)
    e = np.mean(np.abs(y) ** 2, axis=1)
    se_mean = math.sqrt(st_.var_h1[2] / n)
    assert abs(e.mean() - st_.mean_h1[2]) <= 4 * se_mean
    assert e.var() == pytest.approx(st_.var_h1[2], rel=2e-2)


@pytest.mark.slow
def test_true_beam_probability_against_energy_simulation(antenna7, sensed):
    """PU at a sector center, busy band, 0 dB PU SNR, N_se = 500."""
    cfg, s = sensed
    s1 = replace(s, sigma0=0.0, sigma1=1.0)
    m = 3
    phi = antenna7.kappa[m]
    analytic = delta_given_phi(m, phi, s1, cfg, antenna7)
    gains = (np.asarray(energy_stats(phi, cfg, antenna7).mean_h1)
             - cfg.sigma_w2) / (cfg.gamma * cfg.P_p)
    rng = np.random.default_rng(11)
    hits = n = 0
    for _ in range(50):
        k = 2000
        y = (cn(rng, (k, 7, 500)) * np.sqrt(cfg.gamma * gains)[None, :, None]
             * cn(rng, (k, 7, 500), cfg.P_p)
             + cn(rng, (k, 7, 500), cfg.sigma_w2))
        e = np.mean(np.abs(y) ** 2, axis=-1)
        hits += int(np.sum(np.argmax(e, axis=1) == m))
        n += k
    emp = hits / n
    se = math.sqrt(analytic * (1 - analytic) / n)
    print(f"true-beam probability analytic {analytic:.5f} "
          f"empirical {emp:.5f} z={(emp - analytic) / se:+.2f}")
    assert abs(emp - analytic) <= 3 * se


def test_delta_given_phi_bad_beam(antenna7, sensed):
    cfg, s = sensed
    with pytest.raises(IndexError):
        delta_given_phi(7, 0.0, s, cfg, antenna7)


def test_matrix_total_probability(default_scenario):
    D = default_scenario.delta_bar(107).delta_bar
    assert D.sum() == pytest.approx(1.0, abs=1e-6)
    assert np.allclose(D.sum(axis=0), 1 / 7, atol=1e-8)


def test_diagonal_strengthens_with_sensing_length(default_scenario):
    D200 = default_scenario.delta_bar(200).delta_bar
    D800 = default_scenario.delta_bar(800).delta_bar
    assert D800[0, 0] > D200[0, 0]
    for m in range(1, 7):
        assert D800[0, m] < D200[0, m]


def test_csv_round_trip(tmp_path, default_scenario):
    bm = default_scenario.delta_bar(107)
    p = tmp_path / "d.csv"
    bm.to_csv(p, header_comment="x")
    data = np.loadtxt(p, delimiter=",", skiprows=2)
    assert np.allclose(data[:, 1:], bm.delta_bar, rtol=1e-11)
    assert b"\r\n" not in p.read_bytes()


def test_matrix_quadrature_converged(default_scenario):
    sc = default_scenario
    s, cfg = sc.sensing(107), sc.sensing_config(107)
    a = delta_bar_matrix(s, cfg, sc.antenna, nodes=64).delta_bar
    b = delta_bar_matrix(s, cfg, sc.antenna, nodes=160).delta_bar
    assert np.max(np.abs(a - b)) < 1e-9


@pytest.mark.parametrize("M,N_se", [(1, 20), (3, 20), (7, 40)])
def test_truncated_mass_matches_zero_energy_event(M, N_se):
    """Starting the argmax integrals at zero loses exactly the probability
    that every beam energy falls below zero."""
    from scipy.special import ndtr
    from cograte.antenna import build_geometry
    ant = build_geometry(M, -40 * DEG, 40 * DEG)
    cfg = SensingConfig(N_se=N_se, P_p=2.0)
    s = calibrate_threshold(cfg, ant)
    phi = 0.1
    full = delta_vector(phi, s, cfg, ant)
    cut = delta_vector(phi, s, cfg, ant, truncate=True)
    assert math.fsum(full) == pytest.approx(1.0, abs=1e-10)
    es = energy_stats(phi, cfg, ant)
    all_neg1 = np.prod(ndtr(-es.mean_h1 / np.sqrt(es.var_h1)))
    all_neg0 = ndtr(-es.mean_h0 / math.sqrt(es.var_h0)) ** M
    lost = s.sigma1 * all_neg1 + s.sigma0 * all_neg0
    assert 1.0 - math.fsum(cut) == pytest.approx(lost, rel=1e-6, abs=1e-14)
    assert np.all(cut <= full + 1e-15)
