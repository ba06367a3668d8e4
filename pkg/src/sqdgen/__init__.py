"""Perturbation-initialized, generator-driven configuration recovery for
sample-based quantum diagonalization of molecular Hamiltonians."""

from .fermion import (
    ConfigurationSet,
    Determinant,
    OrbitalBasis,
    bitstring_to_determinant,
    determinant_to_bitstring,
    enumerate_symmetry_space,
    symmetry_filter,
    symmetry_space_dimension,
)
from .hamiltonian import CIVector, dense_fci_oracle, ground_state, project_hamiltonian
from .integrals import IntegralSet, mp2_amplitudes, mp2_energy, parse_fcidump
from .rbm import RBMModel, cd_train, init_model, symmetry_constrained_generate
from .recovery import RecoveryConfig, RecoveryReport, initialize_state, run_recovery
from .sampler import Counts, NoiseSpec, load_counts, sample_from_state, save_counts
from .screening import perturbative_selection, perturbative_support

__version__ = "0.1.0"
