"""Bloch-Redfield tensor and propagation (secular and non-secular)."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.integrate import solve_ivp

from . import units
from .bath import BathSpec, CorrelationExpansion, eval_spectral_density, expand_correlation, rate_kernel
from .model import DensityMatrix, EigenSystem
from .observables import TrajectoryRecord

log = logging.getLogger(__name__)


class PropagationError(RuntimeError):
    pass


@dataclass(frozen=True)
class RedfieldTensor:
    """R[n, m, j, k]: rate of rho_nm due to rho_jk (Schrodinger-picture dissipator)."""

    R: np.ndarray
    secular_mask: np.ndarray
    eigeninfo: EigenSystem

    @property
    def dim(self) -> int:
        return self.R.shape[0]

    def element(self, n, m, j, k) -> complex:
        es = self.eigeninfo
        return complex(self.R[es.index(n), es.index(m), es.index(j), es.index(k)])

    def secular(self) -> "RedfieldTensor":
        return RedfieldTensor(np.where(self.secular_mask, self.R, 0.0), self.secular_mask, self.eigeninfo)

    def superoperator(self) -> np.ndarray:
        d = self.dim
        return self.R.reshape(d * d, d * d)


def _half_fourier(bath: BathSpec, expansion, omega):
    if expansion is not None:
        return expansion.half_fourier(omega)
    # no expansion: Re part from the spectral density, Im part by principal value
    return 0.5 * rate_kernel(bath, omega) + 1j * _principal_value(bath, omega)


def _principal_value(bath, omega):
    sd, beta = bath.sd, bath.beta
    w = np.atleast_1d(np.asarray(omega, dtype=float))
    out = np.empty(w.size)
    wmax = 2.0 * sd.cutoff() + 2.0 * np.max(np.abs(w))

    def spec(x):
        # C(t) = (1/2pi) int S(x) exp(i x t) dx with S(x) = 2 J(x) n(x)
        if x == 0.0:
            return 0.0
        with np.errstate(over="ignore"):
            return 2.0 * eval_spectral_density(sd, x) / np.expm1(beta * x)

    for i, wi in enumerate(w):
        # Im Gamma(w) = (1/2pi) P int S(x) / (x + w) dx
        val = integrate.quad(spec, -wmax, wmax, weight="cauchy", wvar=-wi, limit=1000)[0]
        out[i] = val / (2.0 * np.pi)
    return out if np.ndim(omega) else out[0]


def build_tensor(
    es: EigenSystem,
    bath: BathSpec,
    expansion: CorrelationExpansion | None = None,
    lamb_shift: bool = True,
    use_expansion: bool = True,
) -> RedfieldTensor:
    """Redfield tensor from R rho = -[V, Lambda rho - rho Lambda^dagger].

    Lambda_ab = V_ab Gamma(E_b - E_a) with the half-sided transform
    Gamma(w) = int_0^inf C(t) exp(i w t) dt. ``lamb_shift=False`` keeps only
    Re Gamma (the golden-rule part).
    """
    if use_expansion and expansion is None:
        expansion = expand_correlation(bath)
    e = es.energies
    d = e.size
    omega = e[None, :] - e[:, None]  # omega[a, b] = E_b - E_a
    gam = _half_fourier(bath, expansion if use_expansion else None, omega.ravel()).reshape(d, d)
    if not lamb_shift:
        gam = gam.real.astype(complex)
    v = es.V
    lam = v * gam
    eye = np.eye(d)
    vl = v @ lam
    ldv = lam.conj().T @ v
    r = (
        -np.einsum("ac,bd->abcd", vl, eye)
        + np.einsum("ac,db->abcd", lam, v)
        + np.einsum("ac,bd->abcd", v, lam.conj())
        - np.einsum("ac,db->abcd", eye, ldv)
    )
    w_nm = e[:, None] - e[None, :]
    scale = max(1.0, np.max(np.abs(e)))
    mask = np.abs(w_nm[:, :, None, None] - w_nm[None, None, :, :]) <= 1e-12 * scale
    return RedfieldTensor(r, mask, es)


def pauli_rate_matrix(R: RedfieldTensor) -> np.ndarray:
    """W[n, j] = R[n, n, j, j]: the population block (real part)."""
    d = R.dim
    idx = np.arange(d)
    return R.R[idx[:, None], idx[:, None], idx[None, :], idx[None, :]].real


def propagate_redfield(
    rho0: DensityMatrix,
    R: RedfieldTensor,
    mode: str = "nonsecular",
    t_fs=None,
    rtol=1e-8,
    atol=1e-10,
    metadata=None,
) -> TrajectoryRecord:
    """Integrate the interaction-picture master equation on ``t_fs``.

    The returned matrices are Schrodinger-picture eigenbasis matrices.
    """
    if mode not in ("secular", "nonsecular"):
        raise ValueError(f"mode must be 'secular' or 'nonsecular', got {mode!r}")
    if rho0.basis != "eigen":
        raise ValueError("rho0 must be given in the eigenbasis")
    if t_fs is None:
        t_fs = np.arange(0.0, 2000.0 + 0.5, 1.0)
    t_fs = np.asarray(t_fs, dtype=float)
    d = R.dim
    tens = R.secular().R if mode == "secular" else R.R
    e = R.eigeninfo.energies
    w_nm = (e[:, None] - e[None, :]).ravel()
    sup = tens.reshape(d * d, d * d)
    dphase = w_nm[:, None] - w_nm[None, :]
    keep = sup != 0.0
    t_au = units.fs_to_au(t_fs)
    t0 = t_au[0]
    y0 = (rho0.data * np.exp(1j * (e[:, None] - e[None, :]) * t0)).ravel()

    def rhs(t, y):
        g = np.where(keep, sup * np.exp(1j * dphase * t), 0.0)
        return g @ y

    if t_au.size == 1:
        ys = y0[:, None]
    else:
        sol = solve_ivp(rhs, (t0, t_au[-1]), y0, method="DOP853", t_eval=t_au, rtol=rtol, atol=atol)
        if sol.status != 0:
            raise PropagationError(f"Redfield integration failed: {sol.message}")
        ys = sol.y
    rho_int = ys.T.reshape(-1, d, d)
    phase = np.exp(-1j * np.multiply.outer(t_au, e[:, None] - e[None, :]))
    rho = rho_int * phase
    mins = np.linalg.eigvalsh(0.5 * (rho + np.conj(np.swapaxes(rho, 1, 2)))).min()
    if mins < -1e-8:
        log.warning("Redfield state lost positivity (min eigenvalue %.3e)", mins)
    meta = {"solver": f"redfield-{mode}"}
    meta.update(metadata or {})
    return TrajectoryRecord(t_fs, rho, R.eigeninfo.U, R.eigeninfo.labels, meta)


def named_rates(R: RedfieldTensor) -> dict:
    """The population-to-population and population-to-coherence elements out of |B>."""
    return {
        "R_D+D+BB": R.element("D+", "D+", "B", "B"),
        "R_D-D-BB": R.element("D-", "D-", "B", "B"),
        "R_D+D-BB": R.element("D+", "D-", "B", "B"),
        "R_BBD-D-": R.element("B", "B", "D-", "D-"),
        "R_BBD+D+": R.element("B", "B", "D+", "D+"),
        "R_BBD+D-": R.element("B", "B", "D+", "D-"),
    }
