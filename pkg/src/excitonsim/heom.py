"""Hierarchical equations of motion for a single bath coupling operator.

For C(t) = sum_k alpha_k exp(i gamma_k t) the auxiliary density operators obey

    d/dt rho_n = -i[H, rho_n] + i (sum_k n_k gamma_k) rho_n
                 - i sum_k [S, rho_{n+e_k}]
                 - i sum_k n_k (alpha_k S rho_{n-e_k} - alpha~_k rho_{n-e_k} S)

(Schrodinger picture, time-independent S). ADOs are stored rescaled by
prod_k (n_k! s_k^{n_k})^{-1/2} with s_k = max(|alpha_k|, |alpha~_k|); the top
ADO is the physical reduced density matrix either way.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from math import comb

import numpy as np
from scipy import sparse
from scipy.linalg import expm

from . import units
from .bath import CorrelationExpansion
from .model import DensityMatrix
from .observables import TrajectoryRecord

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = "excitonsim-heom-1"
DEFAULT_MAX_ADOS = 200_000
BLOWUP_NORM = 1e6
RK4_STABILITY = 2.5


class HierarchyTooLarge(MemoryError):
    pass


class HEOMBlowUp(RuntimeError):
    pass


def n_ados(n_cor: int, L: int) -> int:
    return comb(n_cor + L, L)


def enumerate_indices(n_cor: int, L: int) -> np.ndarray:
    """All occupation vectors with level <= L, ordered by level then descending lexicographic."""
    out = []

    def rec(prefix, remaining, slots):
        if slots == 1:
            out.append(prefix + [remaining])
            return
        for v in range(remaining, -1, -1):
            rec(prefix + [v], remaining - v, slots - 1)

    for level in range(L + 1):
        if n_cor == 0:
            if level == 0:
                out.append([])
            continue
        rec([], level, n_cor)
    return np.array(out, dtype=np.int64).reshape(-1, n_cor)


def _compositions(total: int, slots: int) -> int:
    """Number of non-negative integer vectors of length ``slots`` summing to ``total``."""
    if slots == 0:
        return 1 if total == 0 else 0
    return comb(total + slots - 1, slots - 1)


def rank(n) -> int:
    """Ordinal of ``n`` in :func:`enumerate_indices` order (independent of L)."""
    n = [int(x) for x in n]
    k = len(n)
    level = sum(n)
    r = comb(level - 1 + k, k) if level > 0 else 0  # vectors of lower level
    remaining = level
    for i, ni in enumerate(n[:-1]):
        slots = k - i - 1
        for v in range(remaining, ni, -1):
            r += _compositions(remaining - v, slots)
        remaining -= ni
    return r


def unrank(r: int, n_cor: int) -> np.ndarray:
    level = 0
    while comb(level + n_cor, n_cor) <= r:
        level += 1
    r -= comb(level - 1 + n_cor, n_cor) if level > 0 else 0
    out = []
    remaining = level
    for i in range(n_cor - 1):
        slots = n_cor - i - 1
        v = remaining
        while True:
            c = _compositions(remaining - v, slots)
            if r < c:
                break
            r -= c
            v -= 1
        out.append(v)
        remaining -= v
    out.append(remaining)
    return np.array(out, dtype=np.int64)


def neighbour_tables(indices: np.ndarray):
    """(plus, minus) ordinal tables; -1 where the neighbour is outside the hierarchy."""
    lookup = {tuple(row): i for i, row in enumerate(indices)}
    n, k = indices.shape
    plus = np.full((n, k), -1, dtype=np.int64)
    minus = np.full((n, k), -1, dtype=np.int64)
    for i, row in enumerate(indices):
        key = list(row)
        for kk in range(k):
            key[kk] += 1
            plus[i, kk] = lookup.get(tuple(key), -1)
            key[kk] -= 2
            if key[kk] >= 0:
                minus[i, kk] = lookup[tuple(key)]
            key[kk] += 1
    return plus, minus


def ado_scales(expansion: CorrelationExpansion) -> np.ndarray:
    s = np.maximum(np.abs(expansion.alpha), np.abs(expansion.alpha_tilde))
    s[s == 0.0] = 1.0
    return s


@dataclass
class HierarchyState:
    ados: np.ndarray
    L: int
    expansion: CorrelationExpansion
    indices: np.ndarray
    plus: np.ndarray
    minus: np.ndarray
    t: float = 0.0
    scales: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.scales is None:
            self.scales = ado_scales(self.expansion)

    @property
    def n_ados(self) -> int:
        return self.indices.shape[0]

    @property
    def dim(self) -> int:
        return self.ados.shape[1]

    @property
    def levels(self) -> np.ndarray:
        return self.indices.sum(axis=1)

    @property
    def rho(self) -> np.ndarray:
        return self.ados[0]

    def copy_with(self, ados, t):
        return HierarchyState(
            ados, self.L, self.expansion, self.indices, self.plus, self.minus, t, self.scales
        )


def build_hierarchy(expansion: CorrelationExpansion, L: int, d: int, max_ados: int = DEFAULT_MAX_ADOS):
    if L < 0:
        raise ValueError("truncation level must be non-negative")
    count = n_ados(expansion.n_cor, L)
    if count > max_ados:
        raise HierarchyTooLarge(
            f"C(n_cor + L, L) = C({expansion.n_cor + L}, {L}) = {count} ADOs exceeds the cap of {max_ados}"
        )
    idx = enumerate_indices(expansion.n_cor, L)
    plus, minus = neighbour_tables(idx)
    ados = np.zeros((idx.shape[0], d, d), dtype=complex)
    return HierarchyState(ados, L, expansion, idx, plus, minus)


def _coefficients(state: HierarchyState):
    ex = state.expansion
    n = state.indices.astype(float)
    s = state.scales
    up = np.where(state.plus >= 0, np.sqrt((n + 1.0) * s), 0.0)
    down = np.sqrt(n / s)
    damp = 1j * (n @ ex.gamma)
    return up, down, damp


def heom_rhs(state: HierarchyState, H: np.ndarray, S: np.ndarray) -> np.ndarray:
    """Time derivative of all (rescaled) ADOs; a direct, unassembled evaluation."""
    x = state.ados
    ex = state.expansion
    up_c, down_c, damp = _coefficients(state)
    out = -1j * (H @ x - x @ H) + damp[:, None, None] * x
    k = ex.n_cor
    up = np.zeros_like(x)
    a_sum = np.zeros_like(x)
    b_sum = np.zeros_like(x)
    for kk in range(k):
        ok = state.plus[:, kk] >= 0
        up[ok] += up_c[ok, kk, None, None] * x[state.plus[ok, kk]]
        ok = state.minus[:, kk] >= 0
        xm = x[state.minus[ok, kk]]
        a_sum[ok] += (down_c[ok, kk] * ex.alpha[kk])[:, None, None] * xm
        b_sum[ok] += (down_c[ok, kk] * ex.alpha_tilde[kk])[:, None, None] * xm
    out += -1j * (S @ up - up @ S)
    out += -1j * (S @ a_sum - b_sum @ S)
    return out


def heom_rhs_interaction(state: HierarchyState, H: np.ndarray, S: np.ndarray, t: float) -> np.ndarray:
    """Interaction-picture form: no H commutator, S(t) = exp(iHt) S exp(-iHt)."""
    u = expm(1j * H * t)
    st = u @ S @ u.conj().T
    zero = np.zeros_like(H)
    return heom_rhs(state, zero, st)


class HEOMGenerator:
    """Assembled sparse generator M with d/dt vec(ADOs) = M vec(ADOs)."""

    def __init__(self, state: HierarchyState, H: np.ndarray, S: np.ndarray):
        d = state.dim
        n = state.n_ados
        ex = state.expansion
        up_c, down_c, damp = _coefficients(state)
        eye_d = np.eye(d)
        left = lambda a: np.kron(a, eye_d)  # noqa: E731  vec(A X), row-major
        right = lambda b: np.kron(eye_d, b.T)  # noqa: E731  vec(X B)
        lh = -1j * (left(H) - right(H))
        com_s = -1j * (left(S) - right(S))
        ls = -1j * left(S)
        rs = 1j * right(S)
        rows = np.arange(n)
        m = sparse.kron(sparse.identity(n, format="csr"), sparse.csr_matrix(lh))
        m = m + sparse.kron(sparse.diags(damp), sparse.identity(d * d))
        for kk in range(ex.n_cor):
            ok = state.plus[:, kk] >= 0
            if ok.any():
                p = sparse.csr_matrix((up_c[ok, kk], (rows[ok], state.plus[ok, kk])), shape=(n, n))
                m = m + sparse.kron(p, sparse.csr_matrix(com_s))
            ok = state.minus[:, kk] >= 0
            if ok.any():
                c = down_c[ok, kk]
                pa = sparse.csr_matrix((c * ex.alpha[kk], (rows[ok], state.minus[ok, kk])), shape=(n, n))
                pb = sparse.csr_matrix(
                    (c * ex.alpha_tilde[kk], (rows[ok], state.minus[ok, kk])), shape=(n, n)
                )
                m = m + sparse.kron(pa, sparse.csr_matrix(ls)) + sparse.kron(pb, sparse.csr_matrix(rs))
        self.matrix = m.tocsr()
        self.matrix.eliminate_zeros()
        self.d = d
        self.n = n
        # crude spectral-radius bound for the explicit step
        self.rate_bound = float(
            np.max(np.abs(damp)) + 2.0 * np.ptp(np.linalg.eigvalsh(H)) + 2.0 * np.sum(np.abs(ex.alpha)) ** 0.5
        )

    def __call__(self, y):
        return self.matrix @ y


def _rk4_step(f, y, h):
    k1 = f(y)
    k2 = f(y + (0.5 * h) * k1)
    k3 = f(y + (0.5 * h) * k2)
    k4 = f(y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _resolve_step(t_fs, dt_fs):
    t_fs = np.asarray(t_fs, dtype=float)
    if t_fs.size == 1:
        return t_fs, 0, dt_fs
    spacing = np.diff(t_fs)
    if not np.allclose(spacing, spacing[0], rtol=1e-9, atol=1e-12):
        raise ValueError("HEOM output grid must be uniform")
    n_sub = max(1, int(round(spacing[0] / dt_fs)))
    if not np.isclose(n_sub * dt_fs, spacing[0], rtol=1e-9):
        raise ValueError(f"output spacing {spacing[0]} fs is not a multiple of dt={dt_fs} fs")
    return t_fs, n_sub, spacing[0] / n_sub


def propagate_heom(
    rho0,
    hierarchy: HierarchyState,
    H: np.ndarray,
    S: np.ndarray,
    t_fs,
    dt_fs: float = 0.1,
    picture: str = "schrodinger",
    record_norms: bool = False,
    metadata=None,
    U=None,
    labels=("D+", "D-", "B"),
    return_state: bool = False,
    rotate=None,
):
    """RK4 propagation of the hierarchy; returns the top-ADO trajectory.

    ``rho0`` (DensityMatrix or d x d array, any Hermitian operator) is placed
    in the top ADO when the hierarchy is at t=0 and otherwise ignored (restart
    from a checkpointed state). ``t_fs`` must be uniform with spacing a
    multiple of ``dt_fs``. With ``rotate`` = W the hierarchy runs in the
    basis of ``H``/``S`` and the recorded matrices are W^dagger rho W (e.g.
    propagate in the site basis, where S is sparse, and report eigenbasis
    matrices with W = U).
    """
    d = hierarchy.dim
    if picture not in ("schrodinger", "interaction"):
        raise ValueError(f"unknown picture {picture!r}")
    t_fs, n_sub, dt = _resolve_step(t_fs, dt_fs)
    x = hierarchy.ados.copy()
    if hierarchy.t == 0.0 and not np.any(x):
        r0 = rho0.data if isinstance(rho0, DensityMatrix) else np.asarray(rho0, dtype=complex)
        x[0] = r0
    shape = x.shape
    y = x.ravel()
    out = np.empty((t_fs.size, d, d), dtype=complex)
    norms = [] if record_norms else None
    levels = hierarchy.levels

    if picture == "schrodinger":
        gen = HEOMGenerator(hierarchy, H, S)
        dt_au = units.fs_to_au(dt)
        while gen.rate_bound * dt_au > RK4_STABILITY:
            n_sub *= 2
            dt /= 2.0
            dt_au /= 2.0
            log.warning("reducing HEOM step to %.4g fs for explicit stability", dt)
        f = gen
    else:
        dt_au = units.fs_to_au(dt)
        clock = {"t": units.fs_to_au(t_fs[0])}

        def f(v):
            st = hierarchy.copy_with(v.reshape(shape), clock["t"])
            return heom_rhs_interaction(st, H, S, clock["t"]).ravel()

    def record(i, vec):
        a = vec.reshape(shape)
        if picture == "interaction":
            ta = units.fs_to_au(t_fs[i])
            u = expm(-1j * H * ta)
            out[i] = u @ a[0] @ u.conj().T
        else:
            out[i] = a[0]
        if rotate is not None:
            out[i] = rotate.conj().T @ out[i] @ rotate
        with np.errstate(over="ignore", invalid="ignore"):
            nrm = np.sqrt(np.sum(np.abs(a) ** 2, axis=(1, 2)))
        if not np.all(np.isfinite(nrm)) or nrm.max() > BLOWUP_NORM:
            bad = int(np.argmax(np.where(np.isfinite(nrm), nrm, np.inf)))
            raise HEOMBlowUp(
                f"ADO norm {nrm[bad]:.3e} at t={t_fs[i]:.3f} fs (ADO {bad}, level {levels[bad]}, "
                f"L={hierarchy.L}, dt={dt} fs)"
            )
        if norms is not None:
            norms.append([nrm[levels == lv].max() for lv in range(hierarchy.L + 1)])

    if picture == "interaction":
        # interaction picture starts from rho~(t0) = exp(iHt0) rho exp(-iHt0)
        t0 = units.fs_to_au(t_fs[0])
        if t0 != 0.0:
            u = expm(1j * H * t0)
            y = np.einsum("ij,njk,lk->nil", u, y.reshape(shape), u.conj()).ravel()
    record(0, y)
    for i in range(1, t_fs.size):
        for _ in range(n_sub):
            if picture == "interaction":
                tc = clock["t"]

                def stage(v, tt):
                    clock["t"] = tt
                    return f(v)

                k1 = stage(y, tc)
                k2 = stage(y + 0.5 * dt_au * k1, tc + 0.5 * dt_au)
                k3 = stage(y + 0.5 * dt_au * k2, tc + 0.5 * dt_au)
                k4 = stage(y + dt_au * k3, tc + dt_au)
                y = y + (dt_au / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
                clock["t"] = tc + dt_au
            else:
                y = _rk4_step(f, y, dt_au)
        record(i, y)
    meta = {"solver": "heom", "L": hierarchy.L, "dt_fs": dt, "n_ados": hierarchy.n_ados,
            "n_cor": hierarchy.expansion.n_cor}
    meta.update(metadata or {})
    if norms is not None:
        meta["ado_norms"] = np.array(norms)
    u_mat = np.eye(d) if U is None else U
    traj = TrajectoryRecord(t_fs, out, u_mat, labels, meta)
    if return_state:
        t_end = hierarchy.t + units.fs_to_au(t_fs[-1] - t_fs[0])
        return traj, hierarchy.copy_with(y.reshape(shape), t_end)
    return traj


def convergence_scan(run, L_list, pair=("D-", "D+")):
    """Run ``run(L) -> TrajectoryRecord`` for each L; sup-norm of Re rho_pair between consecutive L.

    Returns (trajectories dict, list of (L_a, L_b, delta)).
    """
    L_list = list(L_list)
    if any(b < a for a, b in zip(L_list, L_list[1:])):
        raise ValueError("L_list must be ascending")
    trajs = {}
    for L in L_list:
        if L not in trajs:
            trajs[L] = run(L)
    deltas = []
    for a, b in zip(L_list, L_list[1:]):
        ta, tb = trajs[a], trajs[b]
        ea = ta.element(*pair).real
        eb = tb.element(*pair).real
        deltas.append((a, b, float(np.max(np.abs(ea - eb)))))
    return trajs, deltas


def save_checkpoint(path, state: HierarchyState):
    ex = state.expansion
    np.savez(
        path,
        version=np.array(CHECKPOINT_VERSION),
        alpha=ex.alpha,
        alpha_tilde=ex.alpha_tilde,
        gamma=ex.gamma,
        n_poles=np.array(ex.n_poles),
        L=np.array(state.L),
        t=np.array(state.t),
        scales=state.scales,
        ados=state.ados,
    )


def load_checkpoint(path) -> HierarchyState:
    with np.load(path, allow_pickle=False) as z:
        version = str(z["version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version!r}")
        ex = CorrelationExpansion(z["alpha"], z["alpha_tilde"], z["gamma"], int(z["n_poles"]))
        L = int(z["L"])
        ados = z["ados"]
        state = build_hierarchy(ex, L, ados.shape[1], max_ados=max(DEFAULT_MAX_ADOS, ados.shape[0]))
        if state.n_ados != ados.shape[0]:
            raise ValueError("checkpoint ADO count does not match its expansion and level")
        return state.copy_with(ados.copy(), float(z["t"]))
