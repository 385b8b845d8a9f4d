"""Resolve configurations into physical systems, run solvers and write outputs."""
from __future__ import annotations

import csv
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import units
from .bath import (
    P_REF,
    BathSpec,
    CorrelationExpansion,
    SpectralDensity,
    bath_from_p,
    classical_limit,
    expand_correlation,
    set_eta,
)
from .config import ConfigError, ExperimentConfig
from .heom import build_hierarchy, convergence_scan, propagate_heom, save_checkpoint
from .model import (
    DensityMatrix,
    EigenSystem,
    ExcitonNetwork,
    build_hamiltonian,
    diagonalize,
    effective_hamiltonian,
)
from .observables import (
    TrajectoryRecord,
    bloch_volume,
    coherence_modulus,
    purity,
    write_trajectory_csv,
)
from .redfield import build_tensor, named_rates, propagate_redfield

log = logging.getLogger(__name__)


@dataclass
class System:
    """Everything a solver needs, resolved from a configuration."""

    net: ExcitonNetwork
    bath: BathSpec
    h_eff: np.ndarray  # site basis
    S: np.ndarray  # site basis
    es: EigenSystem
    expansion: CorrelationExpansion
    reference: BathSpec | None = None  # bath before the classical rescaling


def resolve(cfg: ExperimentConfig) -> System:
    cfg.validate()
    j12 = None if cfg.j12_cm is None else units.cm_to_au(cfg.j12_cm)
    net = ExcitonNetwork.canonical(j12, cfg.ratio, cfg.noise_site)
    sd = SpectralDensity.named(cfg.shape)
    nm = cfg.n_matsubara
    if nm == 0:
        raise ConfigError("bath.n_matsubara must be at least 1 (or auto)")
    if cfg.eta is not None:
        if cfg.eta == 0.0:
            bath = bath_from_p(sd.with_p(0.0), net, cfg.temperature, nm)
        else:
            bath = set_eta(sd, cfg.eta, net, cfg.temperature, nm)
    else:
        bath = bath_from_p(sd.with_p(cfg.p), net, cfg.temperature, nm)
    reference = None
    if cfg.classical:
        reference = bath
        bath = classical_limit(bath, cfg.t_high, net)
        if nm is not None:
            bath = _with_matsubara(bath, nm)
    h = effective_hamiltonian(build_hamiltonian(net), bath.lam, net.noise_site)
    s = net.coupling_operator()
    es = diagonalize(h, s)
    ex = expand_correlation(bath)
    return System(net, bath, h, s, es, ex, reference)


def _with_matsubara(bath, nm):
    return replace(bath, n_matsubara=nm)


def initial_rho(system: System, label="B") -> DensityMatrix:
    return DensityMatrix(system.es.projector(label), "eigen")


def time_grid(t_end_fs, dt_out_fs):
    n = int(round(t_end_fs / dt_out_fs))
    return np.arange(n + 1) * dt_out_fs


def run_heom(system: System, L, t_fs, dt_fs=0.1, rho0=None, record_norms=False,
             return_state=False, metadata=None):
    """HEOM in the site basis (sparse S); returns eigenbasis matrices.

    ``rho0`` is an eigenbasis matrix (default |B><B|); it may be any
    Hermitian operator, which the Bloch-volume construction relies on.
    """
    es = system.es
    r0 = es.projector("B") if rho0 is None else np.asarray(getattr(rho0, "data", rho0), dtype=complex)
    r0_site = es.U @ r0 @ es.U.conj().T
    hier = build_hierarchy(system.expansion, L, es.dim)
    meta = {"eta": system.bath.eta, "temperature": system.bath.temperature, "L": L}
    meta.update(metadata or {})
    return propagate_heom(
        r0_site, hier, system.h_eff, system.S, t_fs, dt_fs,
        record_norms=record_norms, metadata=meta, U=es.U, labels=es.labels,
        return_state=return_state, rotate=es.U,
    )


def run_redfield(system: System, t_fs, mode="nonsecular", lamb_shift=True, rho0=None):
    R = build_tensor(system.es, system.bath, system.expansion, lamb_shift=lamb_shift)
    r0 = initial_rho(system) if rho0 is None else rho0
    meta = {"eta": system.bath.eta, "temperature": system.bath.temperature}
    return propagate_redfield(r0, R, mode, t_fs, metadata=meta)


def run_trajectory(cfg: ExperimentConfig, system: System | None = None):
    system = resolve(cfg) if system is None else system
    t = time_grid(cfg.t_end_fs, cfg.dt_out_fs)
    rho0 = initial_rho(system, cfg.initial)
    if cfg.method == "redfield":
        return run_redfield(system, t, cfg.mode, cfg.lamb_shift, rho0), None
    return run_heom(system, cfg.L, t, cfg.dt_fs, rho0.data, return_state=True)


class _BasisPropagator:
    """Picklable callable for the d^2 Bloch-volume propagations."""

    def __init__(self, cfg, t_fs):
        self.cfg = cfg
        self.t_fs = t_fs

    def __call__(self, g):
        system = resolve(self.cfg)
        if self.cfg.method == "redfield":
            R = build_tensor(system.es, system.bath, system.expansion, lamb_shift=self.cfg.lamb_shift)
            return propagate_redfield(DensityMatrix(g, "eigen"), R, self.cfg.mode, self.t_fs).rho
        return run_heom(system, self.cfg.L, self.t_fs, self.cfg.dt_fs, g).rho


def volume_series(cfg: ExperimentConfig, t_fs=None):
    if t_fs is None:
        t_fs = time_grid(cfg.volume_t_end_fs or cfg.t_end_fs, cfg.dt_out_fs)
    prop = _BasisPropagator(cfg, t_fs)
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            return bloch_volume(prop, 3, t_fs, mapper=pool.map)
    return bloch_volume(prop, 3, t_fs)


# -- summaries ------------------------------------------------------------------------


def summarize(traj: TrajectoryRecord, tail_fraction=0.1) -> dict:
    """Peak |rho_D+D-|, its time, the half-life after the peak and the late-time purity."""
    c = coherence_modulus(traj, ("D+", "D-"))
    k = int(np.argmax(c))
    peak = float(c[k])
    below = np.nonzero(c[k:] < 0.5 * peak)[0]
    half = float(traj.times_fs[k + below[0]] - traj.times_fs[k]) if below.size and peak > 0 else float("nan")
    n_tail = max(1, int(round(tail_fraction * c.size)))
    return {
        "peak_coherence": peak,
        "time_to_peak_fs": float(traj.times_fs[k]),
        "half_life_fs": half,
        "asymptotic_purity": float(np.mean(purity(traj)[-n_tail:])),
    }


def half_population_time(traj: TrajectoryRecord, label="B") -> float:
    p = traj.population(label)
    idx = np.nonzero(p <= 0.5)[0]
    return float(traj.times_fs[idx[0]]) if idx.size else float("inf")


# -- rates ----------------------------------------------------------------------------

RATE_NAMES = ("R_D+D+BB", "R_D-D-BB", "R_D+D-BB", "R_BBD-D-", "R_BBD+D+", "R_BBD+D-")


def rate_row(system: System, lamb_shift=True) -> dict:
    R = build_tensor(system.es, system.bath, system.expansion, lamb_shift=lamb_shift)
    return named_rates(R)


def rates_table(cfg: ExperimentConfig, etas) -> list:
    rows = []
    for eta in etas:
        system = resolve(cfg.updated(eta=float(eta)))
        rows.append((float(eta), rate_row(system, cfg.lamb_shift)))
    return rows


def rate_columns():
    cols = ["eta"]
    for name in RATE_NAMES:
        if name in ("R_D+D-BB", "R_BBD+D-"):
            parts = [f"Re {name}", f"Im {name}"]
        else:
            parts = [name]
        for p in parts:
            cols += [f"{p} [au]", f"{p} [1/ps]"]
    return cols


def write_rates_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(rate_columns())
        for eta, rates in rows:
            out = [repr(eta)]
            for name in RATE_NAMES:
                v = complex(rates[name])
                vals = [v.real, v.imag] if name in ("R_D+D-BB", "R_BBD+D-") else [v.real]
                for x in vals:
                    out += [repr(float(x)), repr(float(units.rate_au_to_per_ps(x)))]
            w.writerow(out)


def rate_spread(rates: dict) -> float:
    """(max - min) / mean over R_D+D+BB, R_D-D-BB and |R_D+D-BB|."""
    v = np.array([rates["R_D+D+BB"].real, rates["R_D-D-BB"].real, abs(rates["R_D+D-BB"])])
    return float((v.max() - v.min()) / v.mean())


# -- meta and plot scripts ------------------------------------------------------------


def derived_parameters(system: System) -> dict:
    es, bath = system.es, system.bath
    e = {lab: es.energies[es.index(lab)] for lab in es.labels}
    j12 = system.net.couplings[0, 1]
    out = {
        "j12_au": j12,
        "j12_cm": units.au_to_cm(j12),
        "p_au": bath.sd.p,
        "f": bath.sd.p / P_REF,
        "lambda_au": bath.lam,
        "lambda_cm": units.au_to_cm(bath.lam),
        "eta": bath.eta,
        "temperature_k": bath.temperature,
        "beta_au": bath.beta,
        "n_matsubara": system.expansion.n_matsubara,
        "n_cor": system.expansion.n_cor,
    }
    for lab in es.labels:
        out[f"E_{lab}_au"] = e[lab]
        out[f"E_{lab}_cm"] = units.au_to_cm(e[lab])
    pairs = [("B", "D+"), ("B", "D-"), ("D+", "D-")]
    for a, b in pairs:
        g = es.gap(a, b)
        out[f"E_{a}{b}_au"] = g
        out[f"E_{a}{b}_cm"] = units.au_to_cm(g)
    for lab in ("D+", "D-"):
        out[f"V_B{lab}"] = es.V[es.index("B"), es.index(lab)].real
    for k, (w, g) in enumerate(bath.sd.peaks, 1):
        out[f"Omega{k}_au"] = w
        out[f"Gamma{k}_au"] = g
    if system.reference is not None:
        out["eta_nominal"] = bath.eta_nominal
        out["reference_temperature_k"] = bath.reference_temperature
        out["rescale_factor"] = bath.rescale_factor
        out["reference_lambda_cm"] = units.au_to_cm(system.reference.lam)
    return out


def write_meta(path, cfg: ExperimentConfig, system: System, extra=None):
    lines = ["[experiment]", f"name = {cfg.experiment}", "", cfg.to_ini(), "[derived]"]
    for k, v in derived_parameters(system).items():
        lines.append(f"{k} = {_fmt(v)}")
    for k, v in (extra or {}).items():
        lines.append(f"{k} = {_fmt(v)}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


PLOTS = {
    "populations": [("2", "B"), ("3", "D+"), ("4", "D-")],
    "coherence": [("5", "|rho_D+D-|"), ("6", "Re rho_D+D-"), ("7", "Im rho_D+D-"),
                  ("8", "Re rho_BD+"), ("9", "Re rho_BD-")],
    "purity": [("10", "purity")],
    "sites": [("11", "site 1"), ("12", "site 2"), ("13", "site 3")],
}


def write_plot_script(path, data="trajectory.csv", panels=("populations", "coherence", "purity", "sites"),
                      volume=False, rates=False):
    """A gnuplot script; run ``gnuplot plot.gp`` inside the output directory."""
    out = ["set datafile separator ','", "set key autotitle columnhead", "set terminal pngcairo size 900,600"]
    for panel in panels:
        out.append(f"set output '{panel}.png'")
        out.append("set xlabel 'time (fs)'")
        series = ", ".join(f"'{data}' using 1:{col} with lines title '{title}'" for col, title in PLOTS[panel])
        out.append(f"plot {series}")
    if volume:
        out += ["set output 'volume.png'", "set xlabel 'time (fs)'",
                "plot 'volume.csv' using 1:2 with lines title 'V affine', '' using 1:3 with lines title 'V full'"]
    if rates:
        out += ["set output 'rates.png'", "set logscale x", "set xlabel 'eta'",
                "set ylabel 'rate (1/ps)'",
                "plot 'rates.csv' using 1:3 with lines title 'R_D+D+BB', '' using 1:5 with lines title 'R_D-D-BB', "
                "'' using 1:(sqrt($7**2+$9**2)) with lines title '|R_D+D-BB|'"]
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")


# -- named experiments ----------------------------------------------------------------

FIG3_ETAS = tuple(float(x) for x in np.round(np.logspace(-4, np.log10(0.2), 25), 8))

#: figure name -> (kind, config overrides applied before user overrides)
EXPERIMENTS = {
    "fig3": ("rates", {"method": "redfield"}),
    "fig4": ("trajectory", {}),
    "fig5": ("trajectory", {}),
    "fig6": ("trajectory", {}),
    "fig7": ("trajectory", {}),
    "fig8": ("shapes", {}),
    "fig9": ("trajectory", {"classical": True, "L": 2}),
    "fig10": ("trajectory", {"classical": True, "L": 2}),
    "fig11": ("volume", {"bloch_volume": True, "volume_t_end_fs": 1000.0}),
    "fig12": ("convergence", {}),
    "fig13": ("compare", {}),
    "custom": ("trajectory", {}),
}

DEFAULT_ETA = {"fig9": 1e-3, "fig10": 1e-3, "fig12": 0.16}


def preset(name: str) -> dict:
    if name not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {name!r}; choose from {sorted(EXPERIMENTS)}")
    kind, over = EXPERIMENTS[name]
    out = dict(over)
    out["experiment"] = name
    return out


def execute(cfg: ExperimentConfig, directory=None) -> dict:
    """Run the experiment named in ``cfg`` and write its outputs; returns a summary dict."""
    kind = EXPERIMENTS.get(cfg.experiment, ("trajectory", {}))[0]
    if cfg.eta is None and cfg.p is None:
        cfg = cfg.updated(eta=DEFAULT_ETA.get(cfg.experiment, 0.01))
    cfg.validate()
    d = directory or cfg.directory
    os.makedirs(d, exist_ok=True)
    system = resolve(cfg)
    extra = {}
    if kind == "rates":
        etas = cfg.extra.get("etas", FIG3_ETAS)
        rows = rates_table(cfg, etas)
        write_rates_csv(rows, os.path.join(d, "rates.csv"))
        write_plot_script(os.path.join(d, "plot.gp"), panels=(), rates=True)
        result = {"rows": rows}
    elif kind == "shapes":
        result = {}
        for shape in ("thin", "broad"):
            sub = cfg.updated(shape=shape, experiment="custom")
            result[shape] = execute(sub, os.path.join(d, shape))
            extra[f"half_population_fs_{shape}"] = result[shape]["half_population_fs"]
        write_plot_script(os.path.join(d, "plot.gp"), data="thin/trajectory.csv", panels=("populations", "coherence"))
    elif kind == "convergence":
        t = time_grid(cfg.t_end_fs, cfg.dt_out_fs)
        trajs, deltas = convergence_scan(lambda L: run_heom(system, L, t, cfg.dt_fs), cfg.levels)
        for L, tr in trajs.items():
            write_trajectory_csv(tr, os.path.join(d, f"trajectory_L{L}.csv"))
        with open(os.path.join(d, "convergence.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["L_a", "L_b", "sup_delta_re_rho_D-D+"])
            for a, b, delta in deltas:
                w.writerow([a, b, repr(delta)])
        write_plot_script(os.path.join(d, "plot.gp"), data=f"trajectory_L{cfg.levels[-1]}.csv",
                          panels=("coherence",))
        result = {"deltas": deltas, "trajectories": trajs}
    elif kind == "compare":
        t = time_grid(cfg.t_end_fs, cfg.dt_out_fs)
        heom_tr = run_heom(system, cfg.L, t, cfg.dt_fs)
        red_tr = run_redfield(system, t, cfg.mode, cfg.lamb_shift)
        write_trajectory_csv(heom_tr, os.path.join(d, "trajectory.csv"))
        write_trajectory_csv(red_tr, os.path.join(d, "trajectory_redfield.csv"))
        diff = np.max(np.abs(heom_tr.populations() - red_tr.populations()), axis=1)
        with open(os.path.join(d, "comparison.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time_fs", "max_population_difference"])
            for ti, di in zip(t, diff):
                w.writerow([repr(float(ti)), repr(float(di))])
        write_plot_script(os.path.join(d, "plot.gp"), panels=("populations",))
        result = {"heom": heom_tr, "redfield": red_tr, "difference": diff}
    else:
        traj, state = run_trajectory(cfg, system)
        write_trajectory_csv(traj, os.path.join(d, "trajectory.csv"))
        if state is not None and cfg.checkpoint:
            save_checkpoint(os.path.join(d, "checkpoint.npz"), state)
        result = summarize(traj)
        result["half_population_fs"] = half_population_time(traj)
        result["trajectory"] = traj
        extra.update({k: v for k, v in result.items() if k != "trajectory"})
        write_plot_script(os.path.join(d, "plot.gp"), volume=cfg.bloch_volume)
    if cfg.bloch_volume:
        vol = volume_series(cfg)
        vol.write_csv(os.path.join(d, "volume.csv"))
        result["volume"] = vol
        if kind == "volume":
            write_plot_script(os.path.join(d, "plot.gp"), volume=True)
    write_meta(os.path.join(d, "meta"), cfg, system, extra)
    return result
