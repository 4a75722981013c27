"""Torus scattering lengths, the cutoff impurity-phonon Hamiltonian, its
renormalization counterterms, and desk-scale spectra for the Bose polaron."""

__version__ = "0.1.0"

from .errors import (AccuracyError, CapacityError, ContractViolation,
                     SolverError)
from .lattice import (ModelParams, MomentumLattice, build_lattice, dispersion,
                      form_factor)
from .scattering import (PotentialSpec, ScatteringSolution,
                         free_space_scattering_length, rate_fit, sobolev_norm,
                         solve_torus_scattering, torus_scattering_length,
                         truncate_solution)
from .fock import SectorBasis, enumerate_sector, sector_dimension, state_index
from .operators import (DenseOperator, OperatorHandle, dgamma_operator,
                        dressed_rhs, hbf_dense, hbf_operator,
                        pair_sector_lowest, weyl_unitary)
from .renorm import (CountertermReport, counterterms, e_lambda_1, e_lambda_2,
                     gross_profile, theta0)
from .eig import SpectrumReport, dense_eigs, lanczos_lowest
from .asymptotics import (ExpansionBreakdown, dilute_units, e_n_sum,
                          energy_expansion, lhy_sum, log_coefficient,
                          mass_coefficient, scalar_e_U)

__all__ = [
    "AccuracyError", "CapacityError", "ContractViolation", "SolverError",
    "ModelParams", "MomentumLattice", "build_lattice", "dispersion",
    "form_factor", "PotentialSpec", "ScatteringSolution",
    "free_space_scattering_length", "rate_fit", "sobolev_norm",
    "solve_torus_scattering", "torus_scattering_length", "truncate_solution",
    "SectorBasis", "enumerate_sector", "sector_dimension", "state_index",
    "DenseOperator", "OperatorHandle", "dgamma_operator", "dressed_rhs",
    "hbf_dense", "hbf_operator", "pair_sector_lowest", "weyl_unitary",
    "CountertermReport", "counterterms", "e_lambda_1", "e_lambda_2",
    "gross_profile", "theta0", "SpectrumReport", "dense_eigs",
    "lanczos_lowest", "ExpansionBreakdown", "dilute_units", "e_n_sum",
    "energy_expansion", "lhy_sum", "log_coefficient", "mass_coefficient",
    "scalar_e_U",
]
