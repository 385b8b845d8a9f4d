import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from scipy import integrate

from excitonsim import units
from excitonsim.bath import (
    EXPANSION_TOL,
    P_REF,
    CorrelationExpansion,
    DegeneratePolesError,
    SpectralDensity,
    auto_matsubara,
    bath_from_p,
    bose,
    classical_limit,
    correlation_quadrature,
    expand_correlation,
    expansion_error,
    rate_kernel,
    reorganization_energy,
    set_eta,
)
from excitonsim.model import ExcitonNetwork


def test_spectral_density_shape():
    sd = SpectralDensity.thin()
    w = np.linspace(1e-4, 0.02, 2000)
    j = sd(w)
    assert np.all(j > 0)
    assert w[np.argmax(j)] == pytest.approx(4.5639e-3, rel=0.02)
    # odd in omega, cubic at the origin
    assert sd(-3e-3) == pytest.approx(-sd(3e-3))
    assert sd(1e-6) / sd(2e-6) == pytest.approx(1 / 8, rel=1e-6)


def test_reorganization_energy_by_independent_quadrature():
    sd = SpectralDensity.thin(P_REF)
    ref = -integrate.quad(lambda w: sd(w) / w, 0, np.inf, limit=2000, points=None)[0] / np.pi
    assert reorganization_energy(sd) == pytest.approx(ref, rel=1e-6)
    assert reorganization_energy(sd) < 0


def test_reorganization_energy_linear_in_p():
    sd = SpectralDensity.broad(1e-15)
    assert reorganization_energy(sd.with_p(2e-15)) == pytest.approx(2 * reorganization_energy(sd), rel=1e-14)
    assert reorganization_energy(sd.with_p(0.0)) == 0.0


def test_set_eta_fixed_point(net):
    for eta in (1e-4, 1e-3, 0.01, 0.04, 0.16):
        bath = set_eta(SpectralDensity.thin(), eta, net)
        assert bath.eta == pytest.approx(eta, rel=1e-9)
        assert abs(bath.lam) / bath.gap_bd_plus == pytest.approx(eta, rel=1e-9)


def test_eta_0015_reorganization_near_15_wavenumbers(net):
    bath = set_eta(SpectralDensity.thin(), 0.015, net)
    assert abs(units.au_to_cm(bath.lam)) == pytest.approx(15.0, abs=1.0)


def test_broad_and_thin_share_lambda_at_matched_eta(net):
    a = set_eta(SpectralDensity.thin(), 0.01, net)
    b = set_eta(SpectralDensity.broad(), 0.01, net)
    assert a.lam == pytest.approx(b.lam, rel=1e-8)


def test_set_eta_rejects_nonpositive(net):
    with pytest.raises(ValueError):
        set_eta(SpectralDensity.thin(), 0.0, net)


@pytest.mark.parametrize("shape", ["thin", "broad"])
@pytest.mark.parametrize("temperature", [298.0, 1e4])
def test_expansion_matches_quadrature(net, shape, temperature):
    bath = set_eta(SpectralDensity.named(shape), 0.01, net, temperature)
    ex = expand_correlation(bath)
    assert ex.n_matsubara <= 64
    assert expansion_error(bath, ex) < EXPANSION_TOL


def test_quadrature_at_zero_is_real_and_positive(net):
    bath = set_eta(SpectralDensity.thin(), 0.01, net)
    c0 = correlation_quadrature(bath, 0.0)
    assert c0.real > 0 and c0.imag == 0.0


def test_imaginary_part_is_temperature_independent(net):
    lo = set_eta(SpectralDensity.thin(), 0.01, net, 298.0)
    hi = bath_from_p(lo.sd, net, 1e4)
    t = units.fs_to_au(np.array([5.0, 40.0, 200.0]))
    np.testing.assert_allclose(
        correlation_quadrature(lo, t).imag, correlation_quadrature(hi, t).imag, rtol=1e-7, atol=1e-22
    )


def test_conjugate_pairing(net):
    bath = set_eta(SpectralDensity.thin(), 0.01, net)
    ex = expand_correlation(bath, 5)
    t = units.fs_to_au(np.linspace(0, 500, 51))
    np.testing.assert_allclose(ex.conj_series(t), np.conj(ex(t)), atol=1e-12 * abs(ex(0.0)))
    assert np.all(ex.gamma.imag > 0)
    np.testing.assert_array_equal(ex.alpha[4:].imag, 0.0)


def test_matsubara_frequencies(net):
    bath = set_eta(SpectralDensity.thin(), 0.01, net, 298.0)
    ex = expand_correlation(bath, 3)
    nu = 2 * np.pi * np.arange(1, 4) / bath.beta
    np.testing.assert_allclose(ex.gamma[4:], 1j * nu, rtol=1e-14)


def test_half_fourier_real_part_is_half_rate_kernel(net):
    bath = set_eta(SpectralDensity.thin(), 0.01, net)
    ex = expand_correlation(bath, 40)
    w = np.array([-4.5e-3, -1e-3, 1e-3, 4.4e-3, 4.7e-3])
    np.testing.assert_allclose(ex.half_fourier(w).real, 0.5 * rate_kernel(bath, w), rtol=2e-3)


def test_auto_matsubara_counts(net):
    assert auto_matsubara(set_eta(SpectralDensity.thin(), 0.01, net, 298.0)) == 6
    assert auto_matsubara(set_eta(SpectralDensity.thin(), 0.01, net, 1e4)) == 1


def test_degenerate_poles_rejected():
    sd = SpectralDensity(1e-15, ((1e-3, 1e-4), (1e-3, 1e-4)), "custom")
    bath = bath_from_p(sd, ExcitonNetwork.canonical(), 298.0, 2)
    with pytest.raises(DegeneratePolesError):
        expand_correlation(bath)


def test_classical_limit_matches_downhill_rate(net):
    ref = set_eta(SpectralDensity.thin(), 0.01, net, 298.0)
    hot = classical_limit(ref, 1e4, net)
    e = ref.gap_bd_mean
    assert rate_kernel(hot, e) == pytest.approx(rate_kernel(ref, e), rel=1e-12)
    assert hot.eta < ref.eta
    assert hot.eta_nominal == ref.eta
    # near-classical: symmetric part dominates C(t)
    ex = expand_correlation(hot)
    c = ex(units.fs_to_au(np.linspace(0, 300, 31)))
    assert np.max(np.abs(c.imag)) < 0.2 * np.max(np.abs(c.real))


def test_coefficient_table_roundtrip(tmp_path, net):
    ex = expand_correlation(set_eta(SpectralDensity.broad(), 0.01, net), 4)
    path = tmp_path / "coef.txt"
    ex.save(path)
    back = CorrelationExpansion.load(path)
    np.testing.assert_array_equal(back.alpha, ex.alpha)
    np.testing.assert_array_equal(back.gamma, ex.gamma)
    assert back.n_poles == 4


@settings(max_examples=25, deadline=None)
@given(st.floats(1e-5, 0.05), st.floats(10.0, 1e5))
def test_bose_detailed_balance(w, temperature):
    beta = units.beta_from_kelvin(temperature)
    assume(beta * w < 500)
    assert (bose(w, beta) + 1) / bose(w, beta) == pytest.approx(np.exp(beta * w), rel=1e-9)


def test_beta_rejects_nonpositive_temperature():
    with pytest.raises(ValueError):
        units.beta_from_kelvin(0.0)
