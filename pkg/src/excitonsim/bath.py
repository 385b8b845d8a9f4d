"""Structured harmonic bath: spectral density, correlation function, expansion.

Conventions (atomic units, hbar = 1):

* ``J(w) = p w^3 / prod_k [(w + W_k)^2 + G_k^2][(w - W_k)^2 + G_k^2]``, odd in w.
* ``C(t) = (1/pi) int_{-inf}^{inf} J(w) n(w) exp(i w t) dw`` with the Bose
  function ``n``; ``C(t) = sum_k alpha_k exp(i gamma_k t)`` and
  ``C*(t) = sum_k alpha~_k exp(i gamma_k t)`` for t >= 0.
* The reorganization energy consistent with that normalization is
  ``lambda = -(1/pi) int_0^inf J(w)/w dw`` (negative: it lowers the noisy site).
"""
from __future__ import annotations

import functools
import logging
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import integrate

from . import units
from .model import ExcitonNetwork, build_hamiltonian, effective_hamiltonian

log = logging.getLogger(__name__)

#: Two-Lorentzian parameter sets (W1, G1, W2, G2) in a.u.
THIN_PEAKS = ((9.562e-4, 6.3537e-3), (4.5639e-3, 2.7188e-4))
BROAD_PEAKS = ((2.762e-3, 1.6554e-3), (6.4639e-3, 2.5319e-3))
#: Reference amplitude; runs use p = P_REF * f.
P_REF = 1.95e-14

MATSUBARA_CAP = 64
EXPANSION_TOL = 1e-4


class QuadratureError(RuntimeError):
    pass


class FixedPointError(RuntimeError):
    pass


class DegeneratePolesError(ValueError):
    pass


@dataclass(frozen=True)
class SpectralDensity:
    p: float
    peaks: tuple = THIN_PEAKS
    shape: str = "thin"

    def __post_init__(self):
        peaks = tuple((float(w), float(g)) for w, g in self.peaks)
        object.__setattr__(self, "peaks", peaks)
        if self.shape not in ("thin", "broad", "custom"):
            raise ValueError(f"unknown shape tag {self.shape!r}")
        if any(g <= 0 for _, g in peaks):
            raise ValueError("Lorentzian widths must be positive")

    @classmethod
    def thin(cls, p=P_REF):
        return cls(p, THIN_PEAKS, "thin")

    @classmethod
    def broad(cls, p=P_REF):
        return cls(p, BROAD_PEAKS, "broad")

    @classmethod
    def named(cls, shape, p=P_REF):
        if shape == "thin":
            return cls.thin(p)
        if shape == "broad":
            return cls.broad(p)
        raise ValueError(f"no built-in parameters for shape {shape!r}")

    def with_p(self, p):
        return replace(self, p=float(p))

    def __call__(self, omega):
        return eval_spectral_density(self, omega)

    @property
    def peak_frequency(self) -> float:
        return max(w for w, _ in self.peaks)

    def poles(self) -> np.ndarray:
        """Upper-half-plane poles, ordered (W1+iG1, -W1+iG1, W2+iG2, -W2+iG2, ...)."""
        out = []
        for w, g in self.peaks:
            out += [w + 1j * g, -w + 1j * g]
        return np.array(out)

    def _breakpoints(self, wmax):
        pts = {0.0, wmax}
        for w, g in self.peaks:
            for k in (-20, -5, -1, 0, 1, 5, 20):
                x = w + k * g
                if 0.0 < x < wmax:
                    pts.add(x)
        return sorted(pts)

    def cutoff(self) -> float:
        return 20.0 * self.peak_frequency + 20.0 * max(g for _, g in self.peaks)


def eval_spectral_density(sd: SpectralDensity, omega):
    w = np.asarray(omega)
    den = 1.0
    for wk, gk in sd.peaks:
        den = den * ((w + wk) ** 2 + gk**2) * ((w - wk) ** 2 + gk**2)
    return sd.p * w**3 / den


def bose(omega, beta):
    """Bose occupation 1/(exp(beta w) - 1); complex arguments allowed."""
    with np.errstate(over="ignore"):
        return 1.0 / np.expm1(beta * np.asarray(omega))


def _quad(f, a, b, **kw):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        val, err = integrate.quad(f, a, b, limit=1000, **kw)
    return val, err, bool(caught)


@functools.lru_cache(maxsize=64)
def _reorg_per_unit_p(peaks):
    sd = SpectralDensity(1.0, peaks, "custom")
    wmax = sd.cutoff()
    br = sd._breakpoints(wmax)

    def f(w):
        return eval_spectral_density(sd, w) / w if w > 0 else 0.0

    total = err = 0.0
    for a, b in zip(br[:-1], br[1:]):
        v, e, _ = _quad(f, a, b, epsabs=0.0, epsrel=1e-12)
        total += v
        err += e
    v, e, _ = _quad(f, wmax, np.inf, epsabs=0.0, epsrel=1e-10)
    total += v
    err += e
    if err > 1e-8 * abs(total):
        raise QuadratureError(
            f"reorganization integral not converged: value {total:.6e}, error estimate {err:.2e}"
        )
    return -total / np.pi


def reorganization_energy(sd: SpectralDensity) -> float:
    """Signed reorganization energy (negative for p > 0), linear in p."""
    if sd.p == 0.0:
        return 0.0
    return sd.p * _reorg_per_unit_p(sd.peaks)


@dataclass(frozen=True)
class BathSpec:
    """Spectral density at a temperature, with derived coupling measures.

    ``lam`` is the signed reorganization energy of ``sd``; ``eta`` is
    ``|lam| / E_{BD+}`` with the gap taken from the lambda-shifted Hamiltonian.
    ``n_matsubara=None`` selects the smallest count meeting the expansion
    tolerance.
    """

    sd: SpectralDensity
    temperature: float
    lam: float
    eta: float
    gap_bd_plus: float
    gap_bd_mean: float
    n_matsubara: int | None = None
    classical: bool = False
    eta_nominal: float | None = None
    reference_temperature: float | None = None
    rescale_factor: float = 1.0
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.n_matsubara is not None and self.n_matsubara < 1:
            raise ValueError("n_matsubara must be >= 1")

    @property
    def beta(self) -> float:
        return units.beta_from_kelvin(self.temperature)


def _gaps(net: ExcitonNetwork, lam: float):
    """(E_B - E_D+, E_B - mean doublet energy) of the lambda-shifted Hamiltonian."""
    if net.n_sites < 3:
        raise ValueError("gap definitions need at least three sites")
    h = effective_hamiltonian(build_hamiltonian(net), lam, net.noise_site)
    e = np.linalg.eigvalsh(h)
    return e[-1] - e[-2], e[-1] - 0.5 * (e[-2] + e[-3])


def bath_from_p(sd, net, temperature, n_matsubara=None) -> BathSpec:
    lam = reorganization_energy(sd)
    g_plus, g_mean = _gaps(net, lam)
    return BathSpec(sd, temperature, lam, abs(lam) / g_plus, g_plus, g_mean, n_matsubara)


def set_eta(sd, eta_target, net, temperature=298.0, n_matsubara=None, tol=1e-10, max_iter=100):
    """Rescale p so that |lambda| / E_{BD+}(H_eff(lambda)) equals ``eta_target``."""
    if eta_target <= 0:
        raise ValueError("eta_target must be positive")
    lam_unit = reorganization_energy(sd.with_p(1.0))
    p = 0.0
    for _ in range(max_iter):
        g_plus, _ = _gaps(net, lam_unit * p)
        p_new = eta_target * g_plus / abs(lam_unit)
        lam_new = lam_unit * p_new
        g_new, _ = _gaps(net, lam_new)
        if abs(abs(lam_new) / g_new - eta_target) <= tol * eta_target:
            p = p_new
            break
        p = p_new
    else:
        raise FixedPointError(f"eta fixed point did not converge in {max_iter} iterations")
    return bath_from_p(sd.with_p(p), net, temperature, n_matsubara)


# -- correlation function --------------------------------------------------------


def _quadrature_scale(sd, beta):
    """Rough magnitude of C(0), used to set absolute quadrature tolerances."""
    w = sd.peak_frequency
    return abs(eval_spectral_density(sd, w)) * max(w, 1.0 / beta) + 1e-300


def correlation_quadrature(bath: BathSpec, t, rtol=1e-10):
    """C(t) by adaptive quadrature of the one-sided spectral integral.

    Real part: (1/pi) int_0^inf J coth(beta w/2) cos(w t); imaginary part:
    -(1/pi) int_0^inf J sin(w t).
    """
    sd, beta = bath.sd, bath.beta
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(ts < 0):
        raise ValueError("correlation_quadrature needs t >= 0")
    wmax = sd.cutoff()
    br = sd._breakpoints(wmax)
    scale = _quadrature_scale(sd, beta)
    epsabs = rtol * scale

    # plain-float integrands: quad calls these ~1e5 times per grid point
    p = sd.p
    peaks = tuple((float(wk), float(gk) ** 2) for wk, gk in sd.peaks)
    half_beta = 0.5 * beta

    def anti(w):
        den = 1.0
        for wk, g2 in peaks:
            den *= ((w + wk) ** 2 + g2) * ((w - wk) ** 2 + g2)
        return p * w * w * w / den

    def sym(w):
        if w <= 0.0:
            return 0.0
        return anti(w) / math.tanh(half_beta * w)

    out = np.empty(ts.size, dtype=complex)
    for n, tt in enumerate(ts):
        re = im = err = 0.0
        for a, b in zip(br[:-1], br[1:]):
            if tt == 0.0:
                v, e, _ = _quad(sym, a, b, epsabs=epsabs, epsrel=rtol)
                re += v
                err += e
            else:
                v, e, _ = _quad(sym, a, b, weight="cos", wvar=tt, epsabs=epsabs, epsrel=rtol)
                re += v
                err += e
                v, e, _ = _quad(anti, a, b, weight="sin", wvar=tt, epsabs=epsabs, epsrel=rtol)
                im += v
                err += e
        # tail: J ~ p / w^5 and coth ~ 1
        if tt == 0.0:
            v, e, _ = _quad(sym, wmax, np.inf, epsabs=epsabs)
            re += v
            err += e
        else:
            v, e, _ = _quad(sym, wmax, np.inf, weight="cos", wvar=tt, epsabs=epsabs)
            re += v
            err += e
            v, e, _ = _quad(anti, wmax, np.inf, weight="sin", wvar=tt, epsabs=epsabs)
            im += v
            err += e
        if err > 1e-6 * scale:
            raise QuadratureError(f"C(t={tt:g} a.u.) not converged: error estimate {err:.2e}")
        out[n] = (re - 1j * im) / np.pi
    return out if np.ndim(t) else out[0]


@dataclass(frozen=True)
class CorrelationExpansion:
    """C(t) = sum_k alpha_k exp(i gamma_k t); C*(t) uses alpha_tilde."""

    alpha: np.ndarray
    alpha_tilde: np.ndarray
    gamma: np.ndarray
    n_poles: int = 4

    def __post_init__(self):
        for name in ("alpha", "alpha_tilde", "gamma"):
            arr = np.array(getattr(self, name), dtype=complex)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not (self.alpha.shape == self.alpha_tilde.shape == self.gamma.shape):
            raise ValueError("coefficient arrays must have equal length")

    @property
    def n_cor(self) -> int:
        return self.gamma.size

    @property
    def n_matsubara(self) -> int:
        return self.n_cor - self.n_poles

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return np.exp(1j * np.multiply.outer(t, self.gamma)) @ self.alpha

    def conj_series(self, t):
        t = np.asarray(t, dtype=float)
        return np.exp(1j * np.multiply.outer(t, self.gamma)) @ self.alpha_tilde

    def half_fourier(self, omega):
        """int_0^inf C(t) exp(i w t) dt = sum_k alpha_k i / (gamma_k + w)."""
        w = np.asarray(omega, dtype=float)
        return (1j / (np.multiply.outer(w, np.ones(self.n_cor)) + self.gamma)) @ self.alpha

    def scaled(self, factor):
        return CorrelationExpansion(
            self.alpha * factor, self.alpha_tilde * factor, self.gamma, self.n_poles
        )

    def to_table(self) -> np.ndarray:
        return np.column_stack(
            [
                self.alpha.real,
                self.alpha.imag,
                self.alpha_tilde.real,
                self.alpha_tilde.imag,
                self.gamma.real,
                self.gamma.imag,
            ]
        )

    def save(self, path):
        """Write the coefficient table (see ``COEFFICIENT_COLUMNS``)."""
        header = (
            f"n_poles={self.n_poles} n_cor={self.n_cor}\n"
            "C(t) = sum_k alpha_k exp(i gamma_k t), C*(t) = sum_k alpha~_k exp(i gamma_k t); atomic units\n"
            + " ".join(COEFFICIENT_COLUMNS)
        )
        np.savetxt(path, self.to_table(), header=header, fmt="%.17e")

    @classmethod
    def load(cls, path):
        n_poles = 4
        with open(path) as fh:
            first = fh.readline()
        for tok in first.lstrip("# ").split():
            if tok.startswith("n_poles="):
                n_poles = int(tok.split("=")[1])
        tab = np.atleast_2d(np.loadtxt(path))
        return cls(
            tab[:, 0] + 1j * tab[:, 1],
            tab[:, 2] + 1j * tab[:, 3],
            tab[:, 4] + 1j * tab[:, 5],
            n_poles,
        )


COEFFICIENT_COLUMNS = (
    "re_alpha",
    "im_alpha",
    "re_alpha_tilde",
    "im_alpha_tilde",
    "re_gamma",
    "im_gamma",
)


def _matsubara_alpha(sd, beta, j):
    nu = 2.0 * np.pi * np.asarray(j) / beta
    # residue of n(w) at i nu_j is 1/beta; J(i nu) is purely imaginary so alpha_j is real
    return (2j / beta * eval_spectral_density(sd, 1j * nu)).real


def matsubara_tail(bath: BathSpec, n: int, j_max: int = 200000) -> float:
    """|sum_{j>n} alpha_j| relative to C(0): the sup-norm truncation error on t >= 0.

    All Matsubara amplitudes share one sign here, so the tail is largest at t = 0.
    """
    j = np.arange(n + 1, j_max + 1)
    tail = np.sum(_matsubara_alpha(bath.sd, bath.beta, j))
    full = expand_correlation(bath, n_matsubara=n).alpha.sum().real + tail
    return abs(tail) / abs(full) if full else 0.0


def auto_matsubara(bath: BathSpec, tol=EXPANSION_TOL, cap=MATSUBARA_CAP, safety=0.5) -> int:
    """Smallest Matsubara count whose truncation tail is below ``safety * tol``."""
    for n in range(1, cap + 1):
        if matsubara_tail(bath, n) < safety * tol:
            return n
    log.warning("Matsubara count capped at %d", cap)
    return cap


def expand_correlation(bath: BathSpec, n_matsubara: int | None = None) -> CorrelationExpansion:
    """Residue expansion of C(t): Lorentzian poles plus Matsubara terms.

    The poles are closed in the upper half plane. For the pole pair of peak
    k the ordering is (W_k + iG_k, -W_k + iG_k), which makes
    alpha~ = (alpha_2*, alpha_1*, alpha_4*, alpha_3*, ...) and alpha~ = alpha on
    the (real) Matsubara amplitudes.
    """
    sd, beta = bath.sd, bath.beta
    if n_matsubara is None:
        n_matsubara = bath.n_matsubara
    if n_matsubara is None:
        n_matsubara = auto_matsubara(bath)
    if n_matsubara < 1:
        raise ValueError("n_matsubara must be >= 1")
    upper = sd.poles()
    allp = np.concatenate([upper, upper.conj()])
    for i in range(allp.size):
        for j in range(i + 1, allp.size):
            if abs(allp[i] - allp[j]) < 1e-12:
                raise DegeneratePolesError(
                    "coincident Lorentzian poles are not supported by the simple-pole expansion"
                )
    alpha = []
    for i, z in enumerate(upper):
        den = np.prod(z - np.delete(allp, i))
        res = sd.p * z**3 / den
        alpha.append(2j * res * bose(z, beta))
    j = np.arange(1, n_matsubara + 1)
    alpha = np.concatenate([np.array(alpha, dtype=complex), _matsubara_alpha(sd, beta, j)])
    gamma = np.concatenate([upper, 2j * np.pi * j / beta])
    n_poles = upper.size
    alpha_tilde = alpha.conj().copy()
    for k in range(0, n_poles, 2):
        alpha_tilde[k] = np.conj(alpha[k + 1])
        alpha_tilde[k + 1] = np.conj(alpha[k])
    return CorrelationExpansion(alpha, alpha_tilde, gamma, n_poles)


def expansion_error(bath: BathSpec, expansion: CorrelationExpansion, t_fs=None) -> float:
    """Relative sup-norm distance |C_exp - C_quad| / |C_quad(0)| on a time grid (fs)."""
    if t_fs is None:
        t_fs = np.linspace(0.0, 2000.0, 401)
    t = units.fs_to_au(np.asarray(t_fs))
    cq = correlation_quadrature(bath, t)
    ce = expansion(t)
    return float(np.max(np.abs(ce - cq)) / abs(correlation_quadrature(bath, 0.0)))


def rate_kernel(bath: BathSpec, omega):
    """Full Fourier transform of C(t): 2 J(w) (n(w) + 1), for either sign of w."""
    w = np.asarray(omega, dtype=float)
    zero = w == 0.0
    safe = np.where(zero, 1.0, w)
    # J ~ w^3 near the origin, so the product vanishes at w = 0
    out = 2.0 * eval_spectral_density(bath.sd, safe) * (bose(safe, bath.beta) + 1.0)
    return np.where(zero, 0.0, out)[()]


def classical_limit(bath: BathSpec, t_high: float = 1e4, net: ExcitonNetwork | None = None) -> BathSpec:
    """High-temperature bath with p rescaled to keep the downhill golden-rule rate.

    The rate J(E)(n(E) + 1) is matched at E = mean bright-to-doublet gap of
    the reference bath. ``eta`` of the result is computed from the rescaled
    reorganization energy; the reference value is kept as ``eta_nominal``.
    Passing ``net`` recomputes the gaps for the rescaled shift.
    """
    e = bath.gap_bd_mean
    n_ref = bose(e, bath.beta)
    n_high = bose(e, units.beta_from_kelvin(t_high))
    factor = (n_ref + 1.0) / (n_high + 1.0)
    sd = bath.sd.with_p(bath.sd.p * factor)
    lam = reorganization_energy(sd)
    g_plus, g_mean = (bath.gap_bd_plus, bath.gap_bd_mean) if net is None else _gaps(net, lam)
    return BathSpec(
        sd,
        t_high,
        lam,
        abs(lam) / g_plus,
        g_plus,
        g_mean,
        None,
        classical=True,
        eta_nominal=bath.eta if bath.eta_nominal is None else bath.eta_nominal,
        reference_temperature=bath.temperature,
        rescale_factor=float(factor) * bath.rescale_factor,
    )
