"""Numerical laboratory for quasi-stationary mean field games on the torus."""
from .coupling import CouplingOperator, MollifierKernel, estimate_d1_lipschitz
from .fokker_planck import DriftField, FokkerPlanckOperator, PositivityError, evolve, solve_stationary
from .hamiltonian import DomainError, HamiltonianSpec, quadratic, soft_linear
from .hjb import ConvergenceError, HjbConfig, ValuePair, solve_discounted, solve_ergodic
from .metrics import EmpiricalMeasure, d1_circle, d1_grid, d1_sliced, fit_exponential
from .mfg import (
    EquilibriumTriple,
    MfgProblem,
    QssTrajectory,
    convergence_diagnostics,
    evolve_quasi_stationary,
    solve_closed_form,
    solve_discounted_mfg,
    solve_ergodic_mfg,
)
from .particles import ParticleEnsemble, run_chaos_experiment, step_ensemble, verify_ergodic_cost
from .torus import TorusGrid

__version__ = "0.1.0"
