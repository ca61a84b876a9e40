"""Spectral and scattering computations for junctions of one-dimensional photonic crystals."""

from .bloch import BandStructure, GridBlochBasis, PlaneWaveFiber, bloch_analyze, bloch_synthesize, solve_bands
from .dynamics import (CrankNicolson, PropagatorConfig, discretize, make_wavepacket, propagate_free,
                       propagate_full)
from .errors import DomainError, SchemaError
from .grid import Grid, StateVector, WeightContext, weighted_inner
from .media import ConstitutiveProfile, JunctionSystem, Layer, Medium, make_junction, validate_asymptotics
from .scattering import (CutoffPair, Scene, StatePair, dichotomy_matrix, moller_iterate, time_domain_scatter)
from .scene import SceneConfig, load_config, parse_scene
from .spectral import (essential_spectrum_union, find_thresholds, flat_band_certificate, interface_states,
                       mourre_constant, spectrum_of_medium)

__version__ = "0.1.0"

__all__ = [
    "BandStructure", "ConstitutiveProfile", "CrankNicolson", "CutoffPair", "DomainError", "Grid", "GridBlochBasis",
    "JunctionSystem", "Layer", "Medium", "PlaneWaveFiber", "PropagatorConfig", "SceneConfig", "SchemaError", "Scene",
    "StatePair", "StateVector", "WeightContext", "bloch_analyze", "bloch_synthesize", "dichotomy_matrix",
    "discretize", "essential_spectrum_union", "find_thresholds", "flat_band_certificate", "interface_states",
    "load_config", "make_junction", "make_wavepacket", "moller_iterate", "mourre_constant", "parse_scene",
    "propagate_free", "propagate_full", "solve_bands", "spectrum_of_medium", "time_domain_scatter",
    "validate_asymptotics", "weighted_inner",
]
