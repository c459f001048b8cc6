"""Complex-energy spectral functions of non-Hermitian lattice Hamiltonians
via a Hermitrized kernel polynomial method, with a dense
exact-diagonalization oracle for validation at desk scale."""

from importlib.metadata import PackageNotFoundError, version

from .eigensolver import (ConvergenceError, EigenPair, PairingError,
                          SpectrumDecomposition, biorthonormalize, dense_eig,
                          fidelity_deviations, smallest_real_eigpair)
from .kpm import (BlowupError, KpmPlan, PseudospectrumWarning,
                  chebyshev_moments, green_function_at_zero,
                  hermitian_kpm_density, jackson_kernel, make_plan,
                  nhkpm_grid, nhkpm_point)
from .maps import ProjectedProfile, SpectralMap, find_peaks, linear_axis
from .operators import (ScalingRecord, SpinChainParams, build_fermion_chain,
                        build_hatano_nelson, build_spin_chain,
                        estimate_scale_factor, hermitrize,
                        similarity_transform_params, rescale, spin_operator,
                        staggered_field)
from .spectral import (correlator_maps, dynamical_spin_correlator,
                       entanglement_entropy, hermitian_structure_factor,
                       projected_structure_factor, total_correlator,
                       total_dos)

try:
    __version__ = version("nhkpm")
except PackageNotFoundError:
    __version__ = "0.0.0"

__all__ = [
    "BlowupError", "ConvergenceError", "EigenPair", "KpmPlan", "PairingError",
    "ProjectedProfile", "PseudospectrumWarning", "ScalingRecord",
    "SpectralMap", "SpectrumDecomposition", "SpinChainParams",
    "biorthonormalize", "build_fermion_chain", "build_hatano_nelson",
    "build_spin_chain", "chebyshev_moments", "correlator_maps", "dense_eig",
    "dynamical_spin_correlator", "entanglement_entropy",
    "estimate_scale_factor", "fidelity_deviations", "find_peaks",
    "green_function_at_zero", "hermitian_kpm_density",
    "hermitian_structure_factor", "hermitrize", "jackson_kernel",
    "linear_axis", "make_plan", "nhkpm_grid", "nhkpm_point",
    "projected_structure_factor", "rescale", "similarity_transform_params",
    "smallest_real_eigpair", "spin_operator", "staggered_field",
    "total_correlator", "total_dos",
]
