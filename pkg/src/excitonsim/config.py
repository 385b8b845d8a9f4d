"""Experiment configuration: an INI-style key/value file with four sections.

Every key can also be given on the command line (``--t-end-fs 500``);
command-line values override the file, which overrides the defaults.
"""
from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field, fields, replace


class ConfigError(ValueError):
    """Bad configuration value or file; the message names the offending field."""


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _opt_float(text):
    t = str(text).strip().lower()
    return None if t in ("", "none", "auto") else float(t)


def _opt_int(text):
    t = str(text).strip().lower()
    return None if t in ("", "none", "auto") else int(t)


def _int_list(text):
    if isinstance(text, (list, tuple)):
        return tuple(int(x) for x in text)
    parts = [p for p in re.split(r"[,\s]+", str(text).strip()) if p]
    return tuple(int(p) for p in parts)


#: (section, key, parser, default, help)
KEYS = (
    ("model", "j12_cm", _opt_float, None, "J12 in cm^-1 (auto: doublet gap matches the thin peak)"),
    ("model", "ratio", float, 0.1, "J23 / J12"),
    ("model", "noise_site", int, 2, "1-based site carrying the bath coupling"),
    ("bath", "shape", str, "thin", "spectral density shape: thin or broad"),
    ("bath", "eta", _opt_float, None, "coupling strength |lambda| / E_BD+ (give eta or p)"),
    ("bath", "p", _opt_float, None, "spectral density prefactor in a.u. (give eta or p)"),
    ("bath", "temperature", float, 298.0, "bath temperature in K"),
    ("bath", "n_matsubara", _opt_int, None, "Matsubara terms (auto: smallest meeting 1e-4)"),
    ("bath", "classical", _bool, False, "rate-matched high-temperature (classical) noise"),
    ("bath", "t_high", float, 1e4, "temperature of the classical limit in K"),
    ("solver", "method", str, "heom", "heom or redfield"),
    ("solver", "mode", str, "nonsecular", "redfield mode: secular or nonsecular"),
    ("solver", "lamb_shift", _bool, True, "keep imaginary half-Fourier parts in Redfield"),
    ("solver", "L", int, 3, "HEOM truncation level"),
    ("solver", "dt_fs", float, 0.1, "HEOM RK4 step in fs"),
    ("solver", "t_end_fs", float, 2000.0, "propagation window in fs"),
    ("solver", "dt_out_fs", float, 1.0, "output spacing in fs"),
    ("solver", "initial", str, "B", "initial eigenstate label"),
    ("solver", "levels", _int_list, (1, 2, 3, 4, 5), "truncation levels for convergence runs"),
    ("outputs", "directory", str, "out", "output directory"),
    ("outputs", "bloch_volume", _bool, False, "also compute the Bloch volume (d^2 propagations)"),
    ("outputs", "volume_t_end_fs", _opt_float, None, "Bloch-volume window in fs (default t_end_fs)"),
    ("outputs", "checkpoint", _bool, False, "write the final HEOM hierarchy to checkpoint.npz"),
    ("outputs", "workers", int, 1, "parallel worker processes"),
)

SECTIONS = ("model", "bath", "solver", "outputs")
SHAPES = ("thin", "broad")


@dataclass(frozen=True)
class ExperimentConfig:
    j12_cm: float | None = None
    ratio: float = 0.1
    noise_site: int = 2
    shape: str = "thin"
    eta: float | None = None
    p: float | None = None
    temperature: float = 298.0
    n_matsubara: int | None = None
    classical: bool = False
    t_high: float = 1e4
    method: str = "heom"
    mode: str = "nonsecular"
    lamb_shift: bool = True
    L: int = 3
    dt_fs: float = 0.1
    t_end_fs: float = 2000.0
    dt_out_fs: float = 1.0
    initial: str = "B"
    levels: tuple = (1, 2, 3, 4, 5)
    directory: str = "out"
    bloch_volume: bool = False
    volume_t_end_fs: float | None = None
    checkpoint: bool = False
    workers: int = 1
    experiment: str = "custom"
    extra: dict = field(default_factory=dict, compare=False)

    def validate(self) -> "ExperimentConfig":
        if (self.eta is None) == (self.p is None):
            raise ConfigError("bath: exactly one of eta or p must be given")
        if self.eta is not None and self.eta < 0:
            raise ConfigError(f"bath.eta = {self.eta}: must be non-negative")
        if self.p is not None and self.p < 0:
            raise ConfigError(f"bath.p = {self.p}: must be non-negative")
        if self.shape not in SHAPES:
            raise ConfigError(f"bath.shape = {self.shape!r}: expected one of {SHAPES}")
        if self.temperature <= 0 or self.t_high <= 0:
            raise ConfigError("bath: temperatures must be positive")
        if self.method not in ("heom", "redfield"):
            raise ConfigError(f"solver.method = {self.method!r}: expected heom or redfield")
        if self.mode not in ("secular", "nonsecular"):
            raise ConfigError(f"solver.mode = {self.mode!r}: expected secular or nonsecular")
        if self.t_end_fs <= 0:
            raise ConfigError(f"solver.t_end_fs = {self.t_end_fs}: must be positive")
        if self.dt_fs <= 0 or self.dt_out_fs < self.dt_fs:
            raise ConfigError("solver: need 0 < dt_fs <= dt_out_fs")
        ratio = self.dt_out_fs / self.dt_fs
        if abs(ratio - round(ratio)) > 1e-9 * ratio:
            raise ConfigError("solver: dt_out_fs must be an integer multiple of dt_fs")
        if self.L < 0:
            raise ConfigError(f"solver.L = {self.L}: must be non-negative")
        if not self.levels or any(b < a for a, b in zip(self.levels, self.levels[1:])):
            raise ConfigError("solver.levels must be a non-empty ascending list")
        if self.initial not in ("B", "D+", "D-"):
            raise ConfigError(f"solver.initial = {self.initial!r}: expected B, D+ or D-")
        if self.n_matsubara is not None and self.n_matsubara < 0:
            raise ConfigError("bath.n_matsubara must be non-negative")
        if self.workers < 1:
            raise ConfigError("outputs.workers must be at least 1")
        return self

    def updated(self, **changes) -> "ExperimentConfig":
        # setting one of eta/p clears the other
        if changes.get("eta") is not None and "p" not in changes:
            changes["p"] = None
        if changes.get("p") is not None and "eta" not in changes:
            changes["eta"] = None
        return replace(self, **changes)

    def to_ini(self) -> str:
        lines = []
        for sec in SECTIONS:
            lines.append(f"[{sec}]")
            for s, key, _, _, _ in KEYS:
                if s == sec:
                    lines.append(f"{key} = {format_value(getattr(self, key))}")
            lines.append("")
        return "\n".join(lines)


def format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (tuple, list)):
        return ",".join(str(x) for x in v)
    return str(v)


def _line_of(text: str, section: str, key: str):
    current = None
    for n, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.match(r"\[(.+)\]", s)
        if m:
            current = m.group(1).strip()
            continue
        if current == section and re.match(rf"{re.escape(key)}\s*[=:]", s, flags=re.I):
            return n
    return None


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse INI text into a dict of typed overrides (only keys present in the text)."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    known = {(s, k.lower()): (k, parser) for s, k, parser, _, _ in KEYS}
    out = {}
    for sec in cp.sections():
        if sec not in SECTIONS and sec != "experiment" and sec != "derived":
            raise ConfigError(f"{source}: unknown section [{sec}]")
        for key, raw in cp.items(sec):
            if sec == "experiment":
                if key.lower() == "name":
                    out["experiment"] = raw.strip()
                    continue
                raise ConfigError(f"{source}: unknown key experiment.{key}")
            if sec == "derived":
                continue
            entry = known.get((sec, key.lower()))
            line = _line_of(text, sec, key)
            where = f"{source}, line {line}" if line else source
            if entry is None:
                raise ConfigError(f"{where}: unknown key {sec}.{key}")
            name, parser = entry
            try:
                out[name] = parser(raw)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{where}: {sec}.{key} = {raw!r}: {exc}") from None
    return out


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text, str(path))


def config_field_names():
    return [f.name for f in fields(ExperimentConfig) if f.name != "extra"]
