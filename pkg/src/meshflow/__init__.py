"""Variational mesh adaptation on simplicial meshes via a discrete gradient flow."""

from .errors import (DegenerateElement, FoldedElement, IndexOutOfRange, InsufficientStencil,
                     MaxStepsExceeded, MeshflowError, MinStepReached, NonSPDCallback, ParseError,
                     PointOutside, UnresolvedVertex)
from .functionals import FunctionalSpec, eval_derivatives, eval_G
from .gradient_x import element_grad_x, element_grads_x, local_velocities_x
from .gradient_xi import (assemble_grad_xi, balancing_factor, discrete_functional,
                          element_grad_xi, local_velocities_xi)
from .io import read_mesh, read_metric, read_nodal, write_mesh, write_metric, write_nodal, write_vtk
from .mesh import (BoundaryGeometry, BoundaryTags, Constraint, MeshTriple, SimplicialMesh,
                   box_constraints, build_patches, classify_boundary, edge_matrix,
                   plane_constraint)
from .metric import MetricField, build_analytic, build_hessian_metric, build_identity
from .solver import (IntegratorConfig, adapt, integrate, locate_point, phi_h_interpolate, rhs_x,
                     rhs_xi)

__all__ = [
    "BoundaryGeometry", "BoundaryTags", "Constraint", "DegenerateElement", "FoldedElement",
    "FunctionalSpec", "IndexOutOfRange", "InsufficientStencil", "IntegratorConfig",
    "MaxStepsExceeded", "MeshTriple", "MeshflowError", "MetricField", "MinStepReached",
    "NonSPDCallback", "ParseError", "PointOutside", "SimplicialMesh", "UnresolvedVertex", "adapt",
    "assemble_grad_xi", "balancing_factor", "box_constraints", "build_analytic",
    "build_hessian_metric", "build_identity", "build_patches", "classify_boundary",
    "discrete_functional", "edge_matrix", "element_grad_x", "element_grad_xi", "element_grads_x",
    "eval_G", "eval_derivatives", "integrate", "local_velocities_x", "local_velocities_xi",
    "locate_point", "phi_h_interpolate", "plane_constraint", "read_mesh", "read_metric",
    "read_nodal", "rhs_x", "rhs_xi", "write_mesh", "write_metric", "write_nodal", "write_vtk",
]
