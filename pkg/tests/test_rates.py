import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import erfc

from sdmmse.exceptions import ConfigError
from sdmmse.randmat import INF, GueSpectrum, sample_db_gains
from sdmmse.rates import (SUPPORTED_QAM, analytical_sinr, analytical_sinr_unit_interval,
                          capacity_awgn, capacity_loss, capacity_ml, capacity_mmse,
                          effective_snr_loss, gauss_hermite_rule, mutual_information,
                          prefec_ber, qam_constellation, qfunc)


def db(x):
    return 10 * math.log10(x)


# frozen analytic values (SNR = 20 dB)
FROZEN = {(6, 3.0): 18.037, (6, 6.0): 13.082, (6, 10.0): 6.111,
          (INF, 3.0): 18.035, (INF, 6.0): 13.066, (INF, 10.0): 6.103}


@pytest.mark.parametrize('key', sorted(FROZEN, key=str))
def test_frozen_sinr_values(key):
    assert db(analytical_sinr(GueSpectrum(*key), 100.0)) == pytest.approx(FROZEN[key], abs=2e-3)


@pytest.mark.parametrize('D', [2, 6, INF])
@pytest.mark.parametrize('sigma', [1.0, 6.0, 12.0])
@pytest.mark.parametrize('snr_db', [0.0, 15.0, 30.0])
def test_unit_interval_form_agrees(D, sigma, snr_db):
    spec = GueSpectrum(D, sigma)
    snr = 10 ** (snr_db / 10)
    assert analytical_sinr_unit_interval(spec, snr) == pytest.approx(
        analytical_sinr(spec, snr), rel=1e-6)


def test_sinr_mc_semicircle():
    spec = GueSpectrum(INF, 6.0)
    lam = 10 ** (sample_db_gains(spec, 1_000_000, np.random.default_rng(0)) / 10)
    mse = 1 / (1 + 100 * lam)
    ana = 1 / (1 + analytical_sinr(spec, 100.0))
    assert abs(mse.mean() - ana) < 3 * mse.std() / 1000


def test_zero_mdg_branches():
    spec = GueSpectrum(6, 0.0)
    for snr_db in (0, 10, 20, 30):
        snr = 10 ** (snr_db / 10)
        assert analytical_sinr(spec, snr) == snr
        assert capacity_mmse(spec, snr) == pytest.approx(math.log2(1 + snr), rel=1e-12)
        assert capacity_ml(spec, snr) == pytest.approx(math.log2(1 + snr), rel=1e-12)
        assert effective_snr_loss(spec, snr) == pytest.approx(0.0, abs=1e-12)
        assert capacity_loss(spec, snr) == pytest.approx(0.0, abs=1e-12)
    assert capacity_mmse(spec, 100.0) == pytest.approx(6.658, abs=1e-3)


def test_zero_db_contour():
    # where the loss equals 10 log10 SNR the SINR is 0 dB
    from scipy.optimize import brentq
    spec_sigma = brentq(lambda s: db(analytical_sinr(GueSpectrum(INF, s), 10.0)), 1.0, 30.0)
    spec = GueSpectrum(INF, spec_sigma)
    assert effective_snr_loss(spec, 10.0) == pytest.approx(10.0, abs=1e-6)


@settings(max_examples=30, deadline=None)
@given(D=st.sampled_from([2, 6, 12, INF]), sigma=st.floats(0.5, 14.0),
       snr_db=st.floats(0.0, 30.0))
def test_orderings(D, sigma, snr_db):
    spec = GueSpectrum(D, sigma)
    snr = 10 ** (snr_db / 10)
    c_mmse, c_ml, c_awgn = capacity_mmse(spec, snr), capacity_ml(spec, snr), capacity_awgn(snr)
    assert c_mmse <= c_ml + 1e-9
    assert c_ml <= c_awgn + 1e-9
    assert effective_snr_loss(spec, snr) >= -1e-9
    assert 0.0 <= capacity_loss(spec, snr) < 1.0
    assert analytical_sinr(spec, snr * 1.1) > analytical_sinr(spec, snr)
    assert analytical_sinr(GueSpectrum(D, sigma + 0.5), snr) < analytical_sinr(spec, snr)


def test_ber_values():
    assert prefec_ber(0.0, 4) == 0.375
    assert prefec_ber(1e12, 16) == pytest.approx(0.0, abs=1e-300)
    s = 10 ** 1.8
    ref = 2 * 15 / (16 * 4) * 0.5 * erfc(math.sqrt(6 * s / 255) / math.sqrt(2))
    assert prefec_ber(s, 16) == pytest.approx(ref, rel=1e-14)
    assert qfunc(0.0) == 0.5
    with pytest.raises(ConfigError):
        prefec_ber(1.0, 8)
    with pytest.raises(ConfigError):
        prefec_ber(-1.0, 4)


@settings(max_examples=30, deadline=None)
@given(s=st.floats(0.01, 1000.0), M=st.sampled_from(SUPPORTED_QAM))
def test_ber_decreasing_in_sinr(s, M):
    assert prefec_ber(s * 1.01, M) < prefec_ber(s, M)


@settings(max_examples=30, deadline=None)
@given(sinr_db=st.floats(21.0, 40.0))
def test_ber_increasing_in_order(sinr_db):
    # the prefactor 2(M-1)/(M log2 M) shrinks with M, so below ~20 dB the
    # approximation saturates for the large orders and the ordering breaks
    bers = [prefec_ber(10 ** (sinr_db / 10), m) for m in SUPPORTED_QAM]
    assert all(a < b for a, b in zip(bers, bers[1:]))


def test_ber_order_inversion_at_low_sinr():
    assert prefec_ber(1.0, 64) < prefec_ber(1.0, 16)


@pytest.mark.parametrize('M', SUPPORTED_QAM)
def test_constellation(M):
    c = qam_constellation(M)
    assert np.mean(np.abs(c.points) ** 2) == pytest.approx(1.0, abs=1e-12)
    assert len(set(c.gray_map.tolist())) == M
    # Gray: nearest neighbours differ in one bit
    dmin = np.min(np.abs(c.points[:, None] - c.points[None, :]) + 10 * np.eye(M))
    for i in range(M):
        for j in range(M):
            if i != j and abs(abs(c.points[i] - c.points[j]) - dmin) < 1e-9:
                assert bin(int(c.gray_map[i]) ^ int(c.gray_map[j])).count('1') == 1


def test_gauss_hermite_rules():
    r1 = gauss_hermite_rule(1)
    assert r1.nodes.tolist() == [0.0] and r1.weights[0] == pytest.approx(math.sqrt(math.pi))
    r2 = gauss_hermite_rule(2)
    np.testing.assert_allclose(r2.nodes, [-1 / math.sqrt(2), 1 / math.sqrt(2)], atol=1e-15)
    np.testing.assert_allclose(r2.weights, math.sqrt(math.pi) / 2, rtol=1e-14)
    r10 = gauss_hermite_rule(10)
    assert r10.weights.sum() == pytest.approx(math.sqrt(math.pi), abs=1e-10)
    assert r10.integrate(lambda x: x ** 4) == pytest.approx(3 * math.sqrt(math.pi) / 4, abs=1e-12)
    np.testing.assert_allclose(r10.nodes, -r10.nodes[::-1], atol=1e-15)
    ref_nodes, ref_w = np.polynomial.hermite.hermgauss(10)
    np.testing.assert_allclose(r10.nodes, ref_nodes, atol=1e-13)
    np.testing.assert_allclose(r10.weights, ref_w, rtol=1e-11)
    with pytest.raises(ConfigError):
        gauss_hermite_rule(0)


@settings(max_examples=20, deadline=None)
@given(J=st.integers(1, 30), k=st.integers(0, 29))
def test_gauss_hermite_exactness(J, k):
    deg = 2 * k
    if deg > 2 * J - 1:
        return
    rule = gauss_hermite_rule(J)
    exact = math.gamma((deg + 1) / 2)
    assert rule.integrate(lambda x: x ** deg) == pytest.approx(exact, rel=1e-9)


@pytest.mark.parametrize('M', SUPPORTED_QAM)
def test_mi_limits(M):
    for J in (5, 10):
        rule = gauss_hermite_rule(J)
        assert mutual_information(0.0, M, rule) == pytest.approx(0.0, abs=1e-6)
        assert mutual_information(math.inf, M, rule) == pytest.approx(math.log2(M), abs=1e-6)
        assert mutual_information(1e6, M, rule) == pytest.approx(math.log2(M), abs=1e-6)


@settings(max_examples=30, deadline=None)
@given(sinr_db=st.floats(-10.0, 30.0), M=st.sampled_from(SUPPORTED_QAM))
def test_mi_below_shannon(sinr_db, M):
    s = 10 ** (sinr_db / 10)
    mi = mutual_information(s, M)
    assert 0.0 <= mi <= math.log2(M)
    assert mi <= math.log2(1 + s) + 1e-3


def test_mi_monotone_and_raw():
    vals = [mutual_information(10 ** (x / 10), 16) for x in range(-5, 25, 2)]
    assert all(a <= b + 1e-9 for a, b in zip(vals, vals[1:]))
    raw = mutual_information(1e4, 4, clip=False)
    assert abs(raw - 2.0) < 1e-3
