"""ADMM solver for the minimal-section relaxation.

One iteration: per-frequency linear solves plus a frequency-zero saddle
system (global step), pointwise shrinkage at corner samples and interior
edges (local step), dual ascent, residuals, and adaptive penalties. All
system matrices are factored up front; only the frequency-zero saddle
blocks are refactored, and only when a penalty changes.
"""

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .bundle import (TAU_BAR_VERTICAL, FiberDiscretization, make_boundary_data,
                     make_kappa_bar)
from .mesh import build_transport
from .operators import OperatorSet, quarter_turn


@dataclass
class SolverConfig:
    """Parameters of one solve.

    ``lam`` may be a scalar or a per-interior-edge array (a soft mask);
    ``mask`` lists global edge ids whose singularity density is pinned to
    zero (a hard mask). ``eps`` bounds all four residuals at convergence.
    """

    lam: object = 1.0
    radius: float = 1.0
    degree: int = 1
    fiber_n: int = 64
    eps: float = 5e-4
    max_iters: int = 2000
    mu: float = 1.0
    nu: float = 1.0
    adapt: bool = True
    adapt_ratio: float = 10.0
    adapt_factor: float = 2.0
    mask: object = None
    threads: int = 1
    track_objective: bool = True

    def validate(self, n_interior_edges=None):
        lam = np.asarray(self.lam, dtype=float)
        if np.any(lam < 0):
            raise ValueError("lambda must be nonnegative")
        if lam.ndim not in (0, 1):
            raise ValueError("lambda must be a scalar or a per-interior-edge array")
        if lam.ndim == 1 and n_interior_edges is not None and len(lam) != n_interior_edges:
            raise ValueError("lambda field has %d entries; mesh has %d interior edges"
                             % (len(lam), n_interior_edges))
        if self.eps < 0:
            raise ValueError("epsilon must be nonnegative")
        if self.mu <= 0 or self.nu <= 0:
            raise ValueError("penalties must be positive")
        if self.radius <= 0:
            raise ValueError("fiber radius must be positive")
        if self.degree < 1:
            raise ValueError("degree must be a positive integer")
        return lam


@dataclass
class BundleState:
    """ADMM iterate. Corner samples are indexed ``3*face + corner``."""

    sigma_h: np.ndarray        # (n_c, 2, n_inc) horizontal covector samples
    sigma_v: np.ndarray        # (n_c, n_inc) vertical covector samples
    w_h: np.ndarray            # scaled dual, same shape as sigma_h
    w_v: np.ndarray
    gamma: np.ndarray          # (n_ie,) singularity density
    z: np.ndarray              # (n_ie,) scaled dual
    f: np.ndarray              # (k_max + 1, n_v) complex coefficients, k >= 0
    phi: np.ndarray            # (n_ie,)
    mu: float
    nu: float
    iteration: int = 0


@dataclass
class ConvergenceReport:
    converged: bool = False
    iterations: int = 0
    eps: float = 0.0
    residuals: np.ndarray = None            # final (4,) values
    residual_history: np.ndarray = None     # (iterations, 4)
    objective_history: np.ndarray = None
    kkt_residual: float = np.nan
    timings: dict = field(default_factory=dict)
    warning: str = ""


@dataclass
class SolveResult:
    state: BundleState
    report: ConvergenceReport
    ops: OperatorSet
    fd: FiberDiscretization
    boundary: object
    kappa_bar: np.ndarray


def init_state(ops, fd, boundary_data):
    """Feasible start: reference section samples, curvature as density, zero duals."""
    n_c = 3 * len(ops.mesh.triangles)
    n_ie = len(ops.mesh.interior_edges)
    kappa_bar = make_kappa_bar(ops.atlas, ops.degree)
    return BundleState(
        sigma_h=np.zeros((n_c, 2, fd.n)),
        sigma_v=np.full((n_c, fd.n), TAU_BAR_VERTICAL),
        w_h=np.zeros((n_c, 2, fd.n)),
        w_v=np.zeros((n_c, fd.n)),
        gamma=kappa_bar.copy(),
        z=np.zeros(n_ie),
        f=np.zeros((fd.k_max + 1, len(ops.mesh.vertices)), dtype=complex),
        phi=np.zeros(n_ie),
        mu=1.0,
        nu=1.0,
    )


def local_step_sigma(hat_h, hat_v, mu, radius, vec_axis=-1):
    """Pointwise prox of the bundle-metric norm with vertical nonnegativity.

    Clamps the vertical part to be nonnegative, then shortens the sample by
    ``1/mu`` in the metric ``|h|^2 + v^2 / r^2``, zeroing it inside the
    deadzone. ``vec_axis`` locates the 2-vector axis of ``hat_h``.
    """
    v = np.maximum(hat_v, 0.0)
    norm = np.sqrt((hat_h * hat_h).sum(axis=vec_axis) + v * v / (radius * radius))
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(norm > 0, np.maximum(1.0 - 1.0 / (mu * norm), 0.0), 0.0)
    return np.expand_dims(scale, vec_axis) * hat_h, scale * v


def local_step_gamma(gamma_hat, nu, lam, mask_cols=None):
    """Per-edge scalar shrinkage by ``lam/nu``; masked columns forced to zero."""
    thresh = np.broadcast_to(np.asarray(lam, dtype=float) / nu, gamma_hat.shape)
    mag = np.abs(gamma_hat)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(mag > 0, np.maximum(1.0 - thresh / mag, 0.0), 0.0)
    out = scale * gamma_hat
    if mask_cols is not None and len(mask_cols):
        out[mask_cols] = 0.0
    return out


def adapt_penalty(penalty, r_primal, r_dual, ratio=10.0, factor=2.0):
    """Balanced-residual update: returns (new penalty, dual rescale factor)."""
    if r_primal > ratio * r_dual:
        return penalty * factor, 1.0 / factor
    if r_dual > ratio * r_primal:
        return penalty / factor, factor
    return penalty, 1.0


class GlobalSystems:
    """Prefactored linear systems of the global step.

    The per-frequency systems are independent of the penalties and are
    factored once. The frequency-zero saddle system couples the conforming
    and edge-midpoint blocks only through boundary rows; it is solved by a
    dense Schur complement over the boundary multiplier, with the
    conforming block gauge-fixed at one boundary vertex (its zero frequency
    is determined only up to a constant).
    """

    def __init__(self, ops, fd, boundary_data, threads=1):
        self.ops = ops
        self.fd = fd
        self.bd = boundary_data
        self.threads = threads
        mesh = ops.mesh
        n_v = len(mesh.vertices)

        self.b_vertices = np.asarray(boundary_data.vertex_ids, dtype=np.int64)
        is_b = np.zeros(n_v, dtype=bool)
        is_b[self.b_vertices] = True
        self.interior = np.nonzero(~is_b)[0]
        self.pin = int(self.b_vertices.min())
        self.free0 = np.array([v for v in range(n_v) if v != self.pin], dtype=np.int64)

        self._freq = {}
        for k in range(1, fd.k_max + 1):
            L = ops.laplacian(k)
            try:
                lu = splu(L[self.interior][:, self.interior].tocsc())
            except RuntimeError as exc:
                raise RuntimeError("factorization failed at frequency %d: %s"
                                   % (k, exc)) from exc
            self._freq[k] = (lu, L[self.interior][:, self.b_vertices].tocsc())

        L0 = ops.laplacian(0).real.tocsc()
        self._L0 = L0
        self._L0_ff = L0[self.free0][:, self.free0].tocsc()
        self._lu0 = splu(self._L0_ff)

        self._C1 = self._conforming_boundary_rows()     # (n_be, n_v)
        self._C2 = self._cr_boundary_rows()             # (n_be, n_ie)
        C1f = self._C1[:, self.free0]
        # columns of L0_ff^{-1} C1f^T, reused in every Schur rebuild
        self._Z1 = self._lu0.solve(C1f.T.toarray())
        self._S1 = C1f @ self._Z1                       # C1 L0^{-1} C1^T
        self._mu = None
        self._nu = None

    def _conforming_boundary_rows(self):
        ops = self.ops
        rows_mat = ops.boundary
        tri = ops.mesh.triangles
        grad = ops.fem.hat_gradient
        n_be = len(rows_mat.face)
        r, c, v = [], [], []
        for j in range(3):
            f = rows_mat.face
            r.append(np.arange(n_be))
            c.append(tri[f, j])
            v.append(np.einsum("bd,bd->b", rows_mat.edge_vec, grad[f, :, j]))
        return sp.csr_matrix((np.concatenate(v), (np.concatenate(r), np.concatenate(c))),
                             shape=(n_be, len(ops.mesh.vertices))).tocsc()

    def _cr_boundary_rows(self):
        ops = self.ops
        rows_mat = ops.boundary
        cols = ops.cr.face_edge_col
        grad = -2.0 * ops.fem.hat_gradient
        n_be = len(rows_mat.face)
        r, c, v = [], [], []
        for j in range(3):
            f = rows_mat.face
            keep = cols[f, j] >= 0
            r.append(np.arange(n_be)[keep])
            c.append(cols[f[keep], j])
            v.append(np.einsum("bd,bd->b", rows_mat.edge_vec[keep],
                               quarter_turn(grad[f[keep], :, j])))
        return sp.csr_matrix((np.concatenate(v), (np.concatenate(r), np.concatenate(c))),
                             shape=(n_be, len(ops.mesh.interior_edges))).tocsc()

    def refactor(self, mu, nu):
        """(Re)build the frequency-zero saddle pieces for the given penalties."""
        if mu == self._mu and nu == self._nu:
            return
        ops = self.ops
        ell = self.fd.length
        cr = ops.cr
        K2 = (mu * ell) * cr.laplacian \
            + nu * (cr.laplacian @ sp.diags(1.0 / cr.mass) @ cr.laplacian)
        self._lu2 = splu(K2.tocsc())
        self._Z2 = self._lu2.solve(self._C2.T.toarray())
        S = self._S1.toarray() if sp.issparse(self._S1) else self._S1
        S = S / (mu * ell) + self._C2 @ self._Z2
        lu, piv = sla.lu_factor(S)
        diag = np.abs(np.diag(lu))
        if diag.min() <= 1e-14 * max(diag.max(), 1e-300):
            raise RuntimeError("singular boundary coupling: incompatible boundary data")
        self._schur = (lu, piv)
        self._mu, self._nu = mu, nu

    def solve_frequency(self, k, rhs):
        """Solve the frequency-``k`` system with pinned boundary values."""
        lu, L_ib = self._freq[k]
        fb = self.bd.coefficient(k)
        out = np.zeros(rhs.shape[0], dtype=complex)
        out[self.b_vertices] = fb
        out[self.interior] = lu.solve(rhs[self.interior] - L_ib @ fb)
        return out

    def solve_zero(self, rhs1, rhs2, g0):
        """Solve the saddle system; returns (f0, phi, beta).

        ``rhs1``/``rhs2`` carry their penalty factors already; the first
        block is ``mu*ell*L0``, the second the combined edge-midpoint
        operator, coupled by the boundary circulation rows equal to ``g0``.
        """
        mu_ell = self._mu * self.fd.length
        r1 = rhs1[self.free0]
        y1 = self._lu0.solve(r1) / mu_ell
        y2 = self._lu2.solve(rhs2)
        rhs_beta = self._C1[:, self.free0] @ y1 + self._C2 @ y2 - g0
        beta = sla.lu_solve(self._schur, rhs_beta)
        f0 = np.zeros(len(self.ops.mesh.vertices))
        f0[self.free0] = y1 - self._Z1 @ beta / mu_ell
        phi = y2 - self._Z2 @ beta
        return f0, phi, beta

    def kkt_residual(self, f0, phi, beta, rhs1, rhs2, g0):
        """Relative residual of the full three-block saddle system."""
        mu_ell = self._mu * self.fd.length
        ops = self.ops
        cr = ops.cr
        K2phi = (mu_ell * (cr.laplacian @ phi)
                 + self._nu * (cr.laplacian @ ((cr.laplacian @ phi) / cr.mass)))
        r1 = mu_ell * (self._L0 @ f0) + self._C1.T @ beta - rhs1
        r2 = K2phi + self._C2.T @ beta - rhs2
        r3 = self._C1 @ f0 + self._C2 @ phi - g0
        num = np.sqrt(np.sum(r1 ** 2) + np.sum(r2 ** 2) + np.sum(r3 ** 2))
        den = np.sqrt(np.sum(rhs1 ** 2) + np.sum(rhs2 ** 2) + np.sum(g0 ** 2))
        return num / max(den, 1e-300)


class AdmmSolver:
    """Owns operators, factorizations, and the iteration loop for one mesh."""

    def __init__(self, mesh, config, boundary_spec="tangent", atlas=None):
        self.config = config
        self.mesh = mesh
        self.lam = config.validate(len(mesh.interior_edges))
        self.atlas = build_transport(mesh) if atlas is None else atlas
        self.fd = FiberDiscretization(config.fiber_n, config.radius)
        self.ops = OperatorSet.assemble(mesh, self.atlas, config.degree,
                                        config.radius, self.fd.k_max)
        self.bd = make_boundary_data(self.atlas, boundary_spec, config.degree,
                                     self.fd.k_max)
        self.kappa_bar = make_kappa_bar(self.atlas, config.degree)
        self.systems = GlobalSystems(self.ops, self.fd, self.bd, config.threads)
        self.mask_cols = self._mask_columns(config.mask)
        self._phase_times = {"global": 0.0, "local": 0.0, "dual": 0.0,
                             "residual": 0.0}

        # transform matrices between increment samples and frequencies 0..K
        theta = self.fd.theta
        k = np.arange(self.fd.k_max + 1)
        self._fwd = np.exp(-1j * np.outer(theta, k)) / self.fd.n    # (N, K+1)
        inv = np.exp(1j * np.outer(k, theta))                       # (K+1, N)
        inv[1:] *= 2.0
        self._inv = inv

        ks = np.arange(self.fd.k_max + 1)
        self._t_stack = self.ops.transport_d[None, :, :] ** (-ks[:, None, None])
        self._t_conj = np.conj(self._t_stack)

        w = self.ops.fem.corner_weight.ravel()
        self._sample_measure = w[:, None] * (self.fd.length / self.fd.n)
        # boundary circulation of the reconstructed horizontal part equals
        # minus the winding of the boundary data (the interior-edge block
        # rotates gradients by +90 degrees, so positively wound data drives
        # positive singularity density)
        self._g0 = -self.bd.edge_winding

    def _mask_columns(self, mask):
        if mask is None:
            return np.zeros(0, dtype=np.int64)
        edge_ids = np.asarray(mask, dtype=np.int64)
        cols = self.ops.cr.edge_col[edge_ids]
        if np.any(cols < 0):
            bad = edge_ids[cols < 0][0]
            raise ValueError("masked edge %d is not an interior edge" % bad)
        return cols

    # -- pieces of one iteration ----------------------------------------

    def global_step(self, state):
        ops, fd = self.ops, self.fd
        n_f = len(self.mesh.triangles)
        r2 = self.config.radius ** 2

        alpha_h = state.sigma_h + state.w_h
        alpha_v = state.sigma_v + state.w_v - TAU_BAR_VERTICAL
        Ch = alpha_h @ self._fwd                                 # (n_c, 2, K+1)
        Cv = alpha_v @ self._fwd                                 # (n_c, K+1)

        grad = ops.fem.hat_gradient
        area = ops.fem.face_area
        mass = ops.fem.corner_mass

        # batched right-hand side pieces for every frequency at once
        face_h = area[:, None, None] * Ch.reshape(n_f, 3, 2, -1).mean(axis=1)
        gc_all = np.einsum("fdj,fdk->fjk", grad, face_h)         # (n_f, 3, K+1)
        mc_all = np.einsum("fij,fjk->fik", mass, Cv.reshape(n_f, 3, -1))
        idx = ops.fem.corner_vertex.ravel()
        n_v = len(self.mesh.vertices)

        def solve_one(k):
            vals = (self._t_conj[k].ravel()
                    * (gc_all[:, :, k] - (1j * k / r2) * mc_all[:, :, k]).ravel())
            rhs = np.bincount(idx, weights=vals.real, minlength=n_v).astype(complex)
            rhs += 1j * np.bincount(idx, weights=vals.imag, minlength=n_v)
            return self.systems.solve_frequency(k, rhs)

        ks = range(1, fd.k_max + 1)
        if self.config.threads > 1:
            from concurrent.futures import ThreadPoolExecutor
            with ThreadPoolExecutor(max_workers=self.config.threads) as pool:
                for k, fk in zip(ks, pool.map(solve_one, ks)):
                    state.f[k] = fk
        else:
            for k in ks:
                state.f[k] = solve_one(k)

        # frequency zero: conforming + edge-midpoint blocks meet at the boundary
        mu_ell = state.mu * fd.length
        self.systems.refactor(state.mu, state.nu)
        h0 = Ch[:, :, 0].real.reshape(n_f, 3, 2)
        face_h0 = area[:, None] * h0.mean(axis=1)
        rhs1 = mu_ell * ops.scatter_corners(
            np.einsum("fdj,fd->fj", grad, face_h0), 0).real
        jt_h0 = -quarter_turn(face_h0)        # adjoint of the quarter turn
        cr_vals = np.einsum("fdj,fd->fj", -2.0 * grad, jt_h0)
        rhs2 = np.zeros(len(self.mesh.interior_edges))
        cols = ops.cr.face_edge_col
        keep = cols >= 0
        np.add.at(rhs2, cols[keep], cr_vals[keep])
        g = state.gamma - self.kappa_bar + state.z
        rhs2 = mu_ell * rhs2 + state.nu * (ops.cr.laplacian @ g)
        f0, phi, beta = self.systems.solve_zero(rhs1, rhs2, self._g0)
        state.f[0] = f0
        state.phi = phi
        self._last_zero = (f0, phi, beta, rhs1, rhs2)
        return state

    def reconstruct(self, state):
        """Samples of the reference-plus-potential covector (no dual shift)."""
        ops, fd = self.ops, self.fd
        n_f = len(self.mesh.triangles)
        K = fd.k_max
        tri = self.mesh.triangles

        fc_all = self._t_stack * state.f[:, tri]                 # (K+1, n_f, 3)
        CH = np.einsum("fdj,kfj->fdk", ops.fem.hat_gradient, fc_all)
        CV = ((1j * np.arange(K + 1))[:, None, None] * fc_all).transpose(1, 2, 0)
        CH[:, :, 0] += quarter_turn(ops.cr_face_gradient(state.phi))
        CV[:, :, 0] += TAU_BAR_VERTICAL

        Rh_face = (CH @ self._inv).real                          # (n_f, 2, N)
        Rv = (CV @ self._inv).real                               # (n_f, 3, N)
        Rh = np.repeat(Rh_face, 3, axis=0)                       # (n_c, 2, N)
        return Rh, Rv.reshape(3 * n_f, fd.n)

    def gamma_target(self, state):
        cr = self.ops.cr
        return (cr.laplacian @ state.phi) / cr.mass + self.kappa_bar

    def sigma_norm(self, h, v):
        """Mass-weighted bundle-metric norm over corner samples."""
        r2 = self.config.radius ** 2
        val = np.einsum("cdm,cdm->cm", h, h) + v * v / r2
        return np.sqrt(np.sum(self._sample_measure * val))

    def gamma_norm(self, g):
        return np.sqrt(np.sum(self.ops.cr.mass * g * g))

    def objective(self, state):
        """Mass of the section current plus the weighted singularity mass."""
        r2 = self.config.radius ** 2
        dens = np.sqrt(np.einsum("cdm,cdm->cm", state.sigma_h, state.sigma_h)
                       + state.sigma_v ** 2 / r2)
        mass_sigma = np.sum(self._sample_measure * dens)
        mass_gamma = np.sum(self.ops.cr.mass * self.lam * np.abs(state.gamma))
        return mass_sigma + float(mass_gamma)

    def iterate(self, state):
        """One full ADMM sweep; returns the four residuals."""
        cfg = self.config
        t0 = time.perf_counter()
        self.global_step(state)
        Rh, Rv = self.reconstruct(state)
        t1 = time.perf_counter()
        hat_h = Rh - state.w_h
        hat_v = Rv - state.w_v
        prev_h, prev_v = state.sigma_h, state.sigma_v
        state.sigma_h, state.sigma_v = local_step_sigma(hat_h, hat_v, state.mu,
                                                         cfg.radius, vec_axis=1)

        gt = self.gamma_target(state)
        prev_g = state.gamma
        state.gamma = local_step_gamma(gt - state.z, state.nu, self.lam, self.mask_cols)
        t2 = time.perf_counter()

        state.w_h = state.w_h + state.sigma_h - Rh
        state.w_v = state.w_v + state.sigma_v - Rv
        state.z = state.z + state.gamma - gt
        t3 = time.perf_counter()

        r_p_mu = self.sigma_norm(state.sigma_h - Rh, state.sigma_v - Rv)
        r_d_mu = self.sigma_norm(state.sigma_h - prev_h, state.sigma_v - prev_v)
        r_p_nu = self.gamma_norm(state.gamma - gt)
        r_d_nu = self.gamma_norm(state.gamma - prev_g)
        t4 = time.perf_counter()
        pt = self._phase_times
        pt["global"] += t1 - t0
        pt["local"] += t2 - t1
        pt["dual"] += t3 - t2
        pt["residual"] += t4 - t3

        if cfg.adapt:
            state.mu, s = adapt_penalty(state.mu, r_p_mu, r_d_mu,
                                        cfg.adapt_ratio, cfg.adapt_factor)
            if s != 1.0:
                state.w_h = state.w_h * s
                state.w_v = state.w_v * s
            state.nu, s = adapt_penalty(state.nu, r_p_nu, r_d_nu,
                                        cfg.adapt_ratio, cfg.adapt_factor)
            if s != 1.0:
                state.z = state.z * s

        state.iteration += 1
        return np.array([r_p_mu, r_d_mu, r_p_nu, r_d_nu])

    def run(self):
        cfg = self.config
        state = init_state(self.ops, self.fd, self.bd)
        state.mu, state.nu = cfg.mu, cfg.nu
        report = ConvergenceReport(eps=cfg.eps)
        history = []
        objective = []
        t_start = time.perf_counter()
        converged = False
        for _ in range(cfg.max_iters):
            res = self.iterate(state)
            history.append(res)
            if cfg.track_objective:
                objective.append(self.objective(state))
            if cfg.eps > 0 and np.all(res < cfg.eps):
                converged = True
                break
        timings = dict(self._phase_times)
        timings["total"] = time.perf_counter() - t_start
        report.converged = converged
        report.iterations = state.iteration
        report.residuals = history[-1] if history else np.full(4, np.nan)
        report.residual_history = np.array(history)
        report.objective_history = np.array(objective)
        report.timings = timings
        if history:
            f0, phi, beta, rhs1, rhs2 = self._last_zero
            report.kkt_residual = self.systems.kkt_residual(
                f0, phi, beta, rhs1, rhs2, self._g0)
        if not converged:
            report.warning = "iteration cap %d reached before eps=%g" % (
                cfg.max_iters, cfg.eps)
        return SolveResult(state=state, report=report, ops=self.ops, fd=self.fd,
                           boundary=self.bd, kappa_bar=self.kappa_bar)


def run_admm(mesh, config, boundary_spec="tangent", atlas=None):
    """Solve the relaxation on ``mesh``; returns a :class:`SolveResult`.

    Non-convergence within the iteration cap is reported in
    ``result.report.warning``, never raised; partial states remain usable
    for extraction.
    """
    return AdmmSolver(mesh, config, boundary_spec, atlas=atlas).run()
