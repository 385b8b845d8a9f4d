"""Unit conversions.

Everything inside the package is in Hartree atomic units (hbar = 1).
Energies at the user-facing edges are given in cm^-1, times in fs and
temperatures in K.
"""
from scipy import constants as _c

#: 1 Hartree expressed in cm^-1.
HARTREE_TO_CM = _c.physical_constants["hartree-inverse meter relationship"][0] / 100.0
CM_TO_HARTREE = 1.0 / HARTREE_TO_CM

#: Atomic unit of time in femtoseconds.
AU_TIME_FS = _c.physical_constants["atomic unit of time"][0] * 1e15
FS_TO_AU = 1.0 / AU_TIME_FS

#: Boltzmann constant in Hartree per Kelvin.
KB_HARTREE = _c.physical_constants["kelvin-hartree relationship"][0]


def cm_to_au(e):
    return e * CM_TO_HARTREE


def au_to_cm(e):
    return e * HARTREE_TO_CM


def fs_to_au(t):
    return t * FS_TO_AU


def au_to_fs(t):
    return t * AU_TIME_FS


def rate_au_to_per_ps(r):
    """Convert a rate in inverse atomic time units to ps^-1."""
    return r / AU_TIME_FS * 1e3


def beta_from_kelvin(temperature):
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    return 1.0 / (KB_HARTREE * temperature)
