"""Three-site exciton network: Hamiltonian, reorganization shift, eigenbasis."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import units

#: Labels of the canonical three-site eigenstates, ascending in energy.
LABELS_3 = ("D+", "D-", "B")

_SQ2 = np.sqrt(2.0)
#: Approximate eigenvectors of the canonical model in the site basis.
ANALYTIC_STATES = {
    "D-": np.array([0.5, -0.5, -1.0 / _SQ2]),
    "D+": np.array([0.5, -0.5, 1.0 / _SQ2]),
    "B": np.array([1.0 / _SQ2, 1.0 / _SQ2, 0.0]),
}

#: Peak frequency of the thin spectral density (a.u.); sets the canonical energy scale.
THIN_PEAK_AU = 4.5639e-3


@dataclass(frozen=True)
class ExcitonNetwork:
    """Single-excitation network of coupled sites.

    ``epsilon`` and ``couplings`` are in Hartree. ``noise_site`` is 1-based,
    matching the usual site numbering.
    """

    epsilon: np.ndarray
    couplings: np.ndarray
    noise_site: int = 2

    def __post_init__(self):
        eps = np.asarray(self.epsilon, dtype=float)
        jm = np.asarray(self.couplings, dtype=float)
        object.__setattr__(self, "epsilon", eps)
        object.__setattr__(self, "couplings", jm)
        if eps.ndim != 1:
            raise ValueError("epsilon must be a vector")
        if jm.shape != (eps.size, eps.size):
            raise ValueError(
                f"coupling matrix shape {jm.shape} does not match {eps.size} sites"
            )
        if not np.allclose(jm, jm.T, atol=0.0, rtol=0.0):
            raise ValueError("coupling matrix must be symmetric")
        if np.any(np.diag(jm) != 0.0):
            raise ValueError("coupling matrix must have zero diagonal")
        if not 1 <= self.noise_site <= eps.size:
            raise ValueError(f"noise_site {self.noise_site} outside [1, {eps.size}]")

    @property
    def n_sites(self) -> int:
        return self.epsilon.size

    @classmethod
    def canonical(cls, j12: float | None = None, ratio: float = 0.1, noise_site: int = 2):
        """eps1 = eps2 = 0, eps3 = -J12, J23 = ratio * J12, J13 = 0.

        With ``j12=None`` the scale is chosen so that the bright-to-doublet
        gap of the bare Hamiltonian equals the thin spectral-density peak.
        """
        if j12 is None:
            j12 = canonical_j12(ratio=ratio)
        eps = np.array([0.0, 0.0, -j12])
        jm = np.zeros((3, 3))
        jm[0, 1] = jm[1, 0] = j12
        jm[1, 2] = jm[2, 1] = ratio * j12
        return cls(eps, jm, noise_site)

    @classmethod
    def from_cm(cls, epsilon_cm, couplings_cm, noise_site: int = 2):
        return cls(
            units.cm_to_au(np.asarray(epsilon_cm, dtype=float)),
            units.cm_to_au(np.asarray(couplings_cm, dtype=float)),
            noise_site,
        )

    def coupling_operator(self) -> np.ndarray:
        """Site projector on the noisy site (the system part of H_SB)."""
        s = np.zeros((self.n_sites, self.n_sites))
        k = self.noise_site - 1
        s[k, k] = 1.0
        return s


def canonical_j12(target_gap: float = THIN_PEAK_AU, ratio: float = 0.1) -> float:
    """J12 for which E_B - (E_D+ + E_D-)/2 of the bare canonical model equals ``target_gap``.

    The spectrum scales linearly with J12, so one unit diagonalization fixes it.
    """
    e = np.linalg.eigvalsh(build_hamiltonian(ExcitonNetwork.canonical(1.0, ratio)))
    return target_gap / (e[2] - 0.5 * (e[0] + e[1]))


def build_hamiltonian(net: ExcitonNetwork) -> np.ndarray:
    return np.diag(net.epsilon) + net.couplings


def effective_hamiltonian(h_s: np.ndarray, lam: float, noise_site: int) -> np.ndarray:
    """H_S plus the (signed) reorganization shift on the noisy site."""
    h = np.array(h_s, dtype=float if np.isrealobj(h_s) else complex, copy=True)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise ValueError("Hamiltonian must be square")
    if not 1 <= noise_site <= h.shape[0]:
        raise ValueError(f"noise_site {noise_site} outside [1, {h.shape[0]}]")
    h[noise_site - 1, noise_site - 1] += lam
    return h


@dataclass(frozen=True)
class EigenSystem:
    energies: np.ndarray
    U: np.ndarray
    V: np.ndarray
    labels: tuple = field(default=())

    @property
    def dim(self) -> int:
        return self.energies.size

    def index(self, label) -> int:
        if isinstance(label, (int, np.integer)):
            return int(label)
        try:
            return self.labels.index(label)
        except ValueError:
            raise KeyError(f"unknown state label {label!r}; have {self.labels}") from None

    def gap(self, upper, lower) -> float:
        return float(self.energies[self.index(upper)] - self.energies[self.index(lower)])

    def ket(self, label) -> np.ndarray:
        """Eigenvector in the eigenbasis (a unit vector)."""
        v = np.zeros(self.dim, dtype=complex)
        v[self.index(label)] = 1.0
        return v

    def projector(self, label) -> np.ndarray:
        v = self.ket(label)
        return np.outer(v, v.conj())


def _fix_phase(u: np.ndarray) -> np.ndarray:
    u = u.copy()
    for j in range(u.shape[1]):
        col = u[:, j]
        k = np.argmax(np.abs(col))
        ph = col[k] / abs(col[k])
        u[:, j] = col / ph
    if np.allclose(u.imag, 0.0, atol=1e-15):
        u = u.real.copy()
    return u


def _resolve_degeneracies(energies, u, tol=1e-12):
    """Rotate exactly degenerate eigenvectors onto the analytic reference states."""
    d = energies.size
    if d != 3:
        return u
    refs = [ANALYTIC_STATES[lab] for lab in LABELS_3]
    u = u.astype(complex)
    i = 0
    while i < d:
        j = i + 1
        while j < d and abs(energies[j] - energies[i]) <= tol * max(1.0, abs(energies[i])):
            j += 1
        if j - i > 1:
            block = u[:, i:j]
            proj = block @ (block.conj().T)
            new = []
            for pos in range(i, j):
                w = proj @ refs[pos]
                for q in new:
                    w = w - (q.conj() @ w) * q
                nrm = np.linalg.norm(w)
                if nrm < 1e-8:
                    new = None
                    break
                new.append(w / nrm)
            if new is not None:
                u[:, i:j] = np.column_stack(new)
        i = j
    return u


def diagonalize(h_eff: np.ndarray, s: np.ndarray) -> EigenSystem:
    """Eigen-decomposition with ascending energies and V = U^dagger S U."""
    h_eff = np.asarray(h_eff)
    if not np.allclose(h_eff, h_eff.conj().T, atol=1e-14, rtol=0):
        raise ValueError("Hamiltonian is not Hermitian")
    energies, u = np.linalg.eigh(h_eff)
    u = _resolve_degeneracies(energies, u)
    u = _fix_phase(u)
    v = u.conj().T @ np.asarray(s) @ u
    v = 0.5 * (v + v.conj().T)
    labels = LABELS_3 if energies.size == 3 else tuple(f"E{k}" for k in range(energies.size))
    return EigenSystem(energies, u, v, labels)


@dataclass(frozen=True)
class DensityMatrix:
    data: np.ndarray
    basis: str = "eigen"

    def __post_init__(self):
        if self.basis not in ("site", "eigen"):
            raise ValueError(f"basis must be 'site' or 'eigen', got {self.basis!r}")
        arr = np.asarray(self.data, dtype=complex)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ValueError("density matrix must be square")
        object.__setattr__(self, "data", arr)

    def validate(self, herm_tol=1e-12, trace_tol=1e-10, pos_tol=1e-8):
        """Raise ValueError if the matrix is not a valid state."""
        r = self.data
        if np.max(np.abs(r - r.conj().T)) > herm_tol:
            raise ValueError("density matrix not Hermitian")
        if abs(np.trace(r) - 1.0) > trace_tol:
            raise ValueError(f"trace {np.trace(r).real:.12f} != 1")
        if np.linalg.eigvalsh(0.5 * (r + r.conj().T)).min() < -pos_tol:
            raise ValueError("density matrix has negative eigenvalues")
        return self

    @classmethod
    def pure(cls, vec, basis="eigen"):
        v = np.asarray(vec, dtype=complex)
        v = v / np.linalg.norm(v)
        return cls(np.outer(v, v.conj()), basis)


def eigen_to_site(rho: np.ndarray, u: np.ndarray) -> np.ndarray:
    """U rho U^dagger for a single matrix or a stack of matrices."""
    return u @ rho @ u.conj().T


def site_to_eigen(rho: np.ndarray, u: np.ndarray) -> np.ndarray:
    return u.conj().T @ rho @ u


def to_site_basis(rho: DensityMatrix, es: EigenSystem) -> DensityMatrix:
    if rho.basis != "eigen":
        raise ValueError(f"expected an eigenbasis density matrix, got basis={rho.basis!r}")
    return DensityMatrix(eigen_to_site(rho.data, es.U), "site")


def to_eigen_basis(rho: DensityMatrix, es: EigenSystem) -> DensityMatrix:
    if rho.basis != "site":
        raise ValueError(f"expected a site-basis density matrix, got basis={rho.basis!r}")
    return DensityMatrix(site_to_eigen(rho.data, es.U), "eigen")
