"""Finite-element spaces, assembly and sparse solvers."""

from .assembly import (
    assemble_convection,
    assemble_div_coupling,
    assemble_gradient,
    assemble_load,
    assemble_mass,
    assemble_outlet_div_rhs,
    assemble_outlet_divergence,
    assemble_outlet_trace_ops,
    assemble_stiffness,
    barycentric_gradients,
    extension_matrix,
    h1_gram,
)
from .solvers import ConstrainedSystem, SolverOptions, conjugate_gradient, is_symmetric, solve_sparse
from .spaces import DofMap, FEField, OutletSpace

__all__ = [
    "ConstrainedSystem", "DofMap", "FEField", "OutletSpace", "SolverOptions",
    "assemble_convection", "assemble_div_coupling", "assemble_gradient", "assemble_load",
    "assemble_mass", "assemble_outlet_div_rhs", "assemble_outlet_divergence",
    "assemble_outlet_trace_ops", "assemble_stiffness", "barycentric_gradients",
    "conjugate_gradient", "extension_matrix", "h1_gram", "is_symmetric", "solve_sparse",
]
