"""Exciton dynamics in a three-site bright/dark network coupled to a structured bath.

Perturbative (Bloch-Redfield) and numerically exact (HEOM) propagation, with
the observables used to study coherence generated by incoherent relaxation.
"""
from .bath import (
    BathSpec,
    CorrelationExpansion,
    SpectralDensity,
    bath_from_p,
    classical_limit,
    correlation_quadrature,
    expand_correlation,
    expansion_error,
    reorganization_energy,
    set_eta,
)
from .heom import (
    HierarchyState,
    build_hierarchy,
    convergence_scan,
    heom_rhs,
    load_checkpoint,
    propagate_heom,
    save_checkpoint,
)
from .model import (
    DensityMatrix,
    EigenSystem,
    ExcitonNetwork,
    build_hamiltonian,
    diagonalize,
    effective_hamiltonian,
)
from .observables import (
    BlochVolume,
    TrajectoryRecord,
    bloch_volume,
    coherence_modulus,
    purity,
    site_populations,
)
from .redfield import RedfieldTensor, build_tensor, propagate_redfield

__version__ = "0.1.0"

__all__ = [
    "BathSpec", "BlochVolume", "CorrelationExpansion", "DensityMatrix", "EigenSystem",
    "ExcitonNetwork", "HierarchyState", "RedfieldTensor", "SpectralDensity", "TrajectoryRecord",
    "bath_from_p", "bloch_volume", "build_hamiltonian", "build_hierarchy", "build_tensor",
    "classical_limit", "coherence_modulus", "convergence_scan", "correlation_quadrature",
    "diagonalize", "effective_hamiltonian", "expand_correlation", "expansion_error", "heom_rhs",
    "load_checkpoint", "propagate_heom", "propagate_redfield", "purity", "reorganization_energy",
    "save_checkpoint", "set_eta", "site_populations",
]
