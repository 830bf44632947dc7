"""Blind super-resolution from arbitrary Fourier samples.

Spike delays and an unknown point spread function are recovered jointly from
a lifted atomic-norm semidefinite program whose moment cone is parametrized
with prolate spheroidal wave functions.
"""

__version__ = "0.1.0"

from .pswf import PswfBasis, build_basis, phi_matrix
from .signal_model import Instance, SamplingScheme, generate_instance, load_instance, save_instance
from .atomic_sdp import atomic_norm, build_noiseless, build_noisy, solve
from .localization import localize, match_spikes
from .demixing import factor_rank1, reconstruct_psf, solve_amplitudes
from .baseline import build_uniform_scheme, solve_grid_blind_sr
from .experiments import ExperimentConfig, load_config, preset, recover, run_monte_carlo

__all__ = [
    "PswfBasis",
    "build_basis",
    "phi_matrix",
    "Instance",
    "SamplingScheme",
    "generate_instance",
    "load_instance",
    "save_instance",
    "atomic_norm",
    "build_noiseless",
    "build_noisy",
    "solve",
    "localize",
    "match_spikes",
    "factor_rank1",
    "reconstruct_psf",
    "solve_amplitudes",
    "build_uniform_scheme",
    "solve_grid_blind_sr",
    "ExperimentConfig",
    "load_config",
    "preset",
    "recover",
    "run_monte_carlo",
]
