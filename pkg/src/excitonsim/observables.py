"""Quantities derived from density-matrix trajectories."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .model import eigen_to_site


@dataclass
class TrajectoryRecord:
    """Eigenbasis density matrices on a time grid.

    ``rho`` has shape (n_times, d, d); ``U`` maps eigenbasis to site basis.
    """

    times_fs: np.ndarray
    rho: np.ndarray
    U: np.ndarray
    labels: tuple = ("D+", "D-", "B")
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times_fs = np.asarray(self.times_fs, dtype=float)
        self.rho = np.asarray(self.rho, dtype=complex)
        if self.rho.ndim != 3 or self.rho.shape[0] != self.times_fs.size:
            raise ValueError("rho must have shape (n_times, d, d) matching times")
        if self.times_fs.size > 1 and np.any(np.diff(self.times_fs) <= 0):
            raise ValueError("times must be strictly increasing")

    @property
    def dim(self) -> int:
        return self.rho.shape[1]

    def index(self, label) -> int:
        if isinstance(label, (int, np.integer)):
            return int(label)
        try:
            return self.labels.index(label)
        except ValueError:
            raise KeyError(f"unknown state {label!r}; have {self.labels}") from None

    def populations(self) -> np.ndarray:
        return np.einsum("tii->ti", self.rho).real

    def population(self, label) -> np.ndarray:
        k = self.index(label)
        return self.rho[:, k, k].real

    def element(self, a, b) -> np.ndarray:
        return self.rho[:, self.index(a), self.index(b)]

    def site_rho(self) -> np.ndarray:
        return eigen_to_site(self.rho, self.U)

    def window(self, t0_fs=None, t1_fs=None) -> np.ndarray:
        """Boolean mask of times inside [t0, t1]."""
        m = np.ones(self.times_fs.size, dtype=bool)
        if t0_fs is not None:
            m &= self.times_fs >= t0_fs - 1e-9
        if t1_fs is not None:
            m &= self.times_fs <= t1_fs + 1e-9
        return m


def coherence_modulus(traj: TrajectoryRecord, pair=("D+", "D-")) -> np.ndarray:
    a, b = pair
    ia, ib = traj.index(a), traj.index(b)
    if ia == ib:
        raise ValueError(f"pair {pair} does not name a coherence")
    return np.abs(traj.rho[:, ia, ib])


def purity(traj: TrajectoryRecord) -> np.ndarray:
    return np.einsum("tij,tji->t", traj.rho, traj.rho).real


def site_populations(traj: TrajectoryRecord, es=None) -> np.ndarray:
    """Diagonal of U rho U^dagger; columns are sites 1..d."""
    u = traj.U if es is None else es.U
    return np.einsum("tii->ti", eigen_to_site(traj.rho, u)).real


def boltzmann_populations(energies, beta) -> np.ndarray:
    e = np.asarray(energies, dtype=float)
    w = np.exp(-beta * (e - e.min()))
    return w / w.sum()


def boltzmann_purity(energies, beta) -> float:
    p = boltzmann_populations(energies, beta)
    return float(np.sum(p**2))


def dominant_frequency(times_fs, signal, t0_fs=None, t1_fs=None, pad=16):
    """Angular frequency (rad/fs) of the largest Hann-windowed Fourier peak.

    The mean is removed first; the spectrum is zero-padded ``pad`` times and
    the peak refined by parabolic interpolation on the log magnitude.
    """
    t = np.asarray(times_fs, dtype=float)
    y = np.asarray(signal, dtype=float)
    m = np.ones(t.size, dtype=bool)
    if t0_fs is not None:
        m &= t >= t0_fs
    if t1_fs is not None:
        m &= t <= t1_fs
    t, y = t[m], y[m]
    if t.size < 8:
        raise ValueError("too few samples for a frequency estimate")
    dt = t[1] - t[0]
    y = (y - y.mean()) * np.hanning(y.size)
    n = pad * y.size
    spec = np.abs(np.fft.rfft(y, n))
    spec[0] = 0.0
    k = int(np.argmax(spec))
    if 0 < k < spec.size - 1:
        a, b, c = np.log(spec[k - 1 : k + 2] + 1e-300)
        k = k + 0.5 * (a - c) / (a - 2 * b + c)
    return 2.0 * np.pi * k / (n * dt)


# -- Bloch volume -------------------------------------------------------------


def gell_mann_basis(d: int) -> np.ndarray:
    """Orthonormal Hermitian operator basis, Tr(G_m G_n) = delta_mn.

    Order: G_0 = 1/sqrt(d); then for each pair j < k the symmetric and the
    antisymmetric generator (j-major); then the d-1 diagonal generators.
    """
    mats = [np.eye(d, dtype=complex) / np.sqrt(d)]
    for j in range(d):
        for k in range(j + 1, d):
            s = np.zeros((d, d), dtype=complex)
            s[j, k] = s[k, j] = 1.0 / np.sqrt(2.0)
            a = np.zeros((d, d), dtype=complex)
            a[j, k] = -1j / np.sqrt(2.0)
            a[k, j] = 1j / np.sqrt(2.0)
            mats += [s, a]
    for l in range(1, d):
        g = np.zeros((d, d), dtype=complex)
        g[np.arange(l), np.arange(l)] = 1.0
        g[l, l] = -l
        mats.append(g / np.sqrt(l * (l + 1)))
    return np.array(mats)


def dynamical_map_matrix(propagated: np.ndarray, basis: np.ndarray) -> np.ndarray:
    """F_mn(t) = Tr(G_m phi_t[G_n]) from ``propagated[n, t]`` = phi_t[G_n]."""
    f = np.einsum("mij,ntji->tmn", basis, propagated)
    return f.real


@dataclass
class BlochVolume:
    times_fs: np.ndarray
    F: np.ndarray
    v_affine: np.ndarray
    v_full: np.ndarray

    def bumps(self, threshold=1e-4) -> np.ndarray:
        """Indices where the affine volume strictly increases by more than ``threshold``."""
        return np.nonzero(np.diff(self.v_affine) > threshold)[0]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time_fs", "V_affine", "V_full"])
            for row in zip(self.times_fs, self.v_affine, self.v_full):
                w.writerow([_fmt(x) for x in row])


def bloch_volume(
    propagate: Callable[[np.ndarray], np.ndarray],
    d: int,
    times_fs: Sequence[float],
    mapper=map,
) -> BlochVolume:
    """Volume of accessible states from d^2 propagations of the operator basis.

    ``propagate`` takes an initial d x d Hermitian (not necessarily positive)
    matrix and returns its image on ``times_fs``, shape (n_times, d, d).
    ``mapper`` may be a pool's map to run the propagations concurrently.
    """
    basis = gell_mann_basis(d)
    images = np.array(list(mapper(propagate, list(basis))))
    f = dynamical_map_matrix(images, basis)
    v_full = np.linalg.det(f)
    v_aff = np.linalg.det(f[:, 1:, 1:])
    return BlochVolume(np.asarray(times_fs, dtype=float), f, v_aff, v_full)


# -- CSV output ------------------------------------------------------------------

TRAJECTORY_COLUMNS = (
    "time_fs",
    "pop_B",
    "pop_D+",
    "pop_D-",
    "|rho_D+D-|",
    "Re rho_D+D-",
    "Im rho_D+D-",
    "Re rho_BD+",
    "Re rho_BD-",
    "purity",
    "site1",
    "site2",
    "site3",
)


def _fmt(x):
    return repr(float(x))


def trajectory_table(traj: TrajectoryRecord) -> np.ndarray:
    r = traj.rho
    b, dp, dm = traj.index("B"), traj.index("D+"), traj.index("D-")
    sites = site_populations(traj)
    cols = [
        traj.times_fs,
        r[:, b, b].real,
        r[:, dp, dp].real,
        r[:, dm, dm].real,
        np.abs(r[:, dp, dm]),
        r[:, dp, dm].real,
        r[:, dp, dm].imag,
        r[:, b, dp].real,
        r[:, b, dm].real,
        purity(traj),
    ] + [sites[:, k] for k in range(sites.shape[1])]
    return np.column_stack(cols)


def write_trajectory_csv(traj: TrajectoryRecord, path):
    tab = trajectory_table(traj)
    header = list(TRAJECTORY_COLUMNS[:10]) + [f"site{k + 1}" for k in range(traj.dim)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in tab:
            w.writerow([_fmt(x) for x in row])


def read_trajectory_csv(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    head, body = rows[0], np.array(rows[1:], dtype=float)
    return {h: body[:, k] for k, h in enumerate(head)}
