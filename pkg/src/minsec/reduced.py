"""Vertically symmetric limit: an L1-regularized inverse Poisson solve.

With the fiber machinery switched off, the relaxation collapses to
choosing a sparse cone-density against a Dirichlet potential. The same
edge shrinkage and edge-midpoint operators are reused; one symmetric
system is factored per penalty value.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .mesh import build_transport
from .operators import assemble_crouzeix_raviart, assemble_linear_fem
from .solver import adapt_penalty, local_step_gamma


@dataclass
class ReducedSolution:
    phi: np.ndarray
    gamma: np.ndarray
    objective: float
    converged: bool
    iterations: int
    residual_history: np.ndarray
    feasibility: float          # density-constraint violation at termination


def solve_reduced(mesh, kappa_bar, lam_eff, nu=1.0, eps=1e-6, max_iters=20000,
                  mask=None, adapt=True):
    """Minimize Dirichlet energy plus ``lam_eff`` times the cone mass.

    The potential is zero on the boundary; the density and curvature are
    coupled through the edge-midpoint Poisson row. ``lam_eff`` is the
    effective sparsity weight (callers derive it from the regularization
    weight and fiber length).
    """
    if lam_eff < 0:
        raise ValueError("effective sparsity weight must be nonnegative")
    atlas = build_transport(mesh)
    fem = assemble_linear_fem(mesh, atlas)
    cr = assemble_crouzeix_raviart(mesh, fem)
    kappa_bar = np.asarray(kappa_bar, dtype=float)
    n_ie = len(mesh.interior_edges)
    if kappa_bar.shape != (n_ie,):
        raise ValueError("curvature density must have one value per interior edge")

    mask_cols = None
    if mask is not None:
        mask_cols = cr.edge_col[np.asarray(mask, dtype=np.int64)]
        if np.any(mask_cols < 0):
            raise ValueError("masked edge is not an interior edge")

    L = cr.laplacian
    LML = (L @ sp.diags(1.0 / cr.mass) @ L).tocsc()

    gamma = kappa_bar.copy()
    z = np.zeros(n_ie)
    phi = np.zeros(n_ie)
    lu = None
    lu_nu = None
    history = []
    converged = False
    for it in range(max_iters):
        if lu is None or lu_nu != nu:
            lu = splu((2.0 * L + nu * LML).tocsc())
            lu_nu = nu
        phi = lu.solve(nu * (L @ (gamma - kappa_bar + z)))
        target = (L @ phi) / cr.mass + kappa_bar
        prev = gamma
        gamma = local_step_gamma(target - z, nu, lam_eff, mask_cols)
        z = z + gamma - target
        r_p = np.sqrt(np.sum(cr.mass * (gamma - target) ** 2))
        r_d = np.sqrt(np.sum(cr.mass * (gamma - prev) ** 2))
        history.append((r_p, r_d))
        if adapt:
            nu, s = adapt_penalty(nu, r_p, r_d)
            if s != 1.0:
                z = z * s
        if r_p < eps and r_d < eps:
            converged = True
            break

    feas = np.sqrt(np.sum(cr.mass * ((L @ phi) / cr.mass - (gamma - kappa_bar)) ** 2))
    objective = float(phi @ (L @ phi) + lam_eff * np.sum(cr.mass * np.abs(gamma)))
    return ReducedSolution(phi=phi, gamma=gamma, objective=objective,
                           converged=converged, iterations=len(history),
                           residual_history=np.array(history), feasibility=feas)
