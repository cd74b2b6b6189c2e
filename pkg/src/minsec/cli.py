"""Command-line pipeline: mesh in, field/singularity/diagnostic files out.

Outputs are plain text with fixed column orders so plotting and meshing
stay external. Exit code 0 means the solve converged, 2 means it hit the
iteration cap (partial results are still written), 1 is any error.
"""

import argparse
import os
import sys
import time
from dataclasses import dataclass, fields

import numpy as np

from .bundle import make_kappa_bar
from .extract import (baseline_smoothest_field, concentration_cdf, extract_field,
                      extract_singularities, fiber_w2, graph_area)
from .mesh import MeshError, build_transport, load_mesh
from .operators import OperatorSet
from .reduced import solve_reduced
from .solver import SolverConfig, run_admm

MODES = ("minsec", "reduced", "baseline")


@dataclass
class RunConfig:
    mesh: str = ""
    mode: str = "minsec"
    degree: int = 1
    lam: float = 1.0
    lambda_field: str = ""
    radius: float = 1.0
    fiber_n: int = 64
    epsilon: float = 5e-4
    max_iters: int = 2000
    mu: float = 1.0
    nu: float = 1.0
    mask: str = ""
    boundary: str = "tangent"
    out: str = "."
    emit_current: bool = False
    threads: int = 1
    deterministic: bool = False


_PARSERS = {
    "mesh": str, "mode": str, "lambda_field": str, "mask": str,
    "boundary": str, "out": str,
    "degree": int, "fiber_n": int, "max_iters": int, "threads": int,
    "lam": float, "radius": float, "epsilon": float, "mu": float, "nu": float,
    "emit_current": lambda s: s.lower() in ("1", "true", "yes", "on"),
    "deterministic": lambda s: s.lower() in ("1", "true", "yes", "on"),
}
_KEY_ALIASES = {"lambda": "lam", "n": "fiber_n", "eps": "epsilon"}


class ConfigError(ValueError):
    pass


def _check(config):
    if config.mode not in MODES:
        raise ConfigError("mode must be one of %s, got %r" % (", ".join(MODES), config.mode))
    if config.lam < 0:
        raise ConfigError("lambda must be nonnegative")
    if config.fiber_n < 8 or config.fiber_n % 2:
        raise ConfigError("N must be even and >= 8")
    if config.radius <= 0:
        raise ConfigError("radius must be positive")
    if config.epsilon <= 0:
        raise ConfigError("epsilon must be positive")
    if config.degree < 1:
        raise ConfigError("degree must be a positive integer")
    if config.max_iters < 1:
        raise ConfigError("max_iters must be a positive integer")
    if config.mu <= 0 or config.nu <= 0:
        raise ConfigError("penalties mu and nu must be positive")
    if config.threads < 1:
        raise ConfigError("threads must be a positive integer")
    return config


def validate_config(path):
    """Parse a flat ``key = value`` config file into a validated RunConfig."""
    config = RunConfig()
    known = {f.name for f in fields(RunConfig)}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            if "=" not in body:
                raise ConfigError("%s:%d: expected key = value" % (path, lineno))
            key, value = (s.strip() for s in body.split("=", 1))
            key = _KEY_ALIASES.get(key.lower(), key.lower())
            if key not in known:
                raise ConfigError("%s:%d: unknown key %r" % (path, lineno, key))
            try:
                setattr(config, key, _PARSERS[key](value))
            except ValueError as exc:
                raise ConfigError("%s:%d: bad value for %r: %s" % (path, lineno, key, exc))
    return _check(config)


def _read_boundary_file(path):
    angles = {}
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            angles[int(parts[0])] = float(parts[1])
    return angles


def _read_mask_file(path, mesh):
    """Vertex lines mask every interior edge between two listed vertices;
    two-index lines name an edge directly."""
    verts = set()
    edges = []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if len(parts) == 1:
                verts.add(int(parts[0]))
            else:
                edges.append(tuple(sorted((int(parts[0]), int(parts[1])))))
    pair_to_edge = {tuple(e): i for i, e in enumerate(map(tuple, mesh.edges))}
    ids = [pair_to_edge[e] for e in edges if e in pair_to_edge]
    if verts:
        for eid in mesh.interior_edges:
            a, b = mesh.edges[eid]
            if a in verts and b in verts:
                ids.append(int(eid))
    return sorted(set(ids))


def _read_lambda_field(path, mesh, base):
    per_vertex = {}
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            per_vertex[int(parts[0])] = float(parts[1])
    out = np.full(len(mesh.interior_edges), base)
    for i, eid in enumerate(mesh.interior_edges):
        a, b = mesh.edges[eid]
        vals = [per_vertex[v] for v in (a, b) if v in per_vertex]
        if vals:
            out[i] = float(np.mean(vals))
    if np.any(out < 0):
        raise ConfigError("lambda must be nonnegative")
    return out


def _write_field(path, field):
    with open(path, "w") as fh:
        for v in range(len(field.z)):
            fh.write("%d %.17g %.17g\n" % (v, field.angle[v], field.confidence[v]))


def _write_frames(path, atlas):
    with open(path, "w") as fh:
        for v, (e1, e2) in enumerate(atlas.vertex_frame):
            fh.write("%d %.17g %.17g %.17g %.17g %.17g %.17g\n"
                     % (v, e1[0], e1[1], e1[2], e2[0], e2[1], e2[2]))


def _write_singularities(path, sing):
    with open(path, "w") as fh:
        for c in sing.clusters:
            fh.write("%.17g %.17g %.17g %.17g %.17g\n"
                     % (c.position[0], c.position[1], c.position[2],
                        c.index, c.residual))


def _write_gamma(path, mesh, gamma):
    with open(path, "w") as fh:
        for col, eid in enumerate(mesh.interior_edges):
            a, b = mesh.edges[eid]
            fh.write("%d %d %d %.17g\n" % (eid, a, b, gamma[col]))


def _write_current(path, state, ops, fd):
    r2 = ops.radius ** 2
    dens = np.sqrt(np.einsum("cdm,cdm->cm", state.sigma_h, state.sigma_h)
                   + state.sigma_v ** 2 / r2)
    with open(path, "w") as fh:
        for c in range(dens.shape[0]):
            face, corner = divmod(c, 3)
            for m in range(dens.shape[1]):
                fh.write("%d %d %d %.17g\n" % (face, corner, m, dens[c, m]))


def _write_diagnostics(path, lines):
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def run(config):
    """Execute one configured pipeline; returns the process exit code."""
    _check(config)
    if config.deterministic:
        config.threads = 1
    if not config.mesh:
        print("error: no mesh given", file=sys.stderr)
        return 1
    if not os.path.exists(config.mesh):
        print("error: mesh not found: %s" % config.mesh, file=sys.stderr)
        return 1
    try:
        mesh = load_mesh(config.mesh)
    except MeshError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1

    os.makedirs(config.out, exist_ok=True)
    path = lambda name: os.path.join(config.out, name)
    atlas = build_transport(mesh)

    boundary_spec = config.boundary
    if boundary_spec != "tangent":
        boundary_spec = _read_boundary_file(config.boundary)

    if config.mode == "baseline":
        ops = OperatorSet.assemble(mesh, atlas, config.degree, config.radius, k_max=1)
        field = baseline_smoothest_field(ops)
        _write_field(path("field.txt"), field)
        _write_frames(path("frames.txt"), atlas)
        return 0

    if config.mode == "reduced":
        kb = make_kappa_bar(atlas, config.degree)
        ell = 2 * np.pi * config.radius
        mask = _read_mask_file(config.mask, mesh) if config.mask else None
        t0 = time.perf_counter()
        out = solve_reduced(mesh, kb, lam_eff=2 * config.lam / ell ** 2,
                            nu=config.nu, eps=config.epsilon,
                            max_iters=config.max_iters, mask=mask)
        elapsed = time.perf_counter() - t0
        _write_gamma(path("gamma.txt"), mesh, out.gamma)
        lines = ["mode reduced",
                 "iterations %d" % out.iterations,
                 "converged %d" % int(out.converged),
                 "objective %.17g" % out.objective,
                 "feasibility %.17g" % out.feasibility,
                 "time_seconds %.6f" % elapsed]
        _write_diagnostics(path("diagnostics.txt"), lines)
        return 0 if out.converged else 2

    lam = config.lam
    if config.lambda_field:
        lam = _read_lambda_field(config.lambda_field, mesh, config.lam)
    mask = _read_mask_file(config.mask, mesh) if config.mask else None
    solver_cfg = SolverConfig(
        lam=lam, radius=config.radius, degree=config.degree,
        fiber_n=config.fiber_n, eps=config.epsilon, max_iters=config.max_iters,
        mu=config.mu, nu=config.nu, mask=mask, threads=config.threads)
    res = run_admm(mesh, solver_cfg, boundary_spec, atlas=atlas)
    field = extract_field(res.state, res.ops)
    sing = extract_singularities(res.state.gamma, res.ops, config.degree)

    _write_field(path("field.txt"), field)
    _write_frames(path("frames.txt"), atlas)
    _write_singularities(path("singularities.txt"), sing)
    _write_gamma(path("gamma.txt"), mesh, res.state.gamma)
    if config.emit_current:
        _write_current(path("current.txt"), res.state, res.ops, res.fd)

    thetas = np.pi * np.arange(33) / 32
    cdf = concentration_cdf(res.state, field, res.ops, res.fd, thetas)
    w2 = fiber_w2(res.state, field, res.ops, res.fd)
    try:
        area = graph_area(field, res.ops, config.radius)
    except ValueError:
        area = float("nan")
    rep = res.report
    lines = ["mode minsec",
             "iterations %d" % rep.iterations,
             "converged %d" % int(rep.converged),
             "graph_area %.17g" % area,
             "kkt_residual %.6g" % rep.kkt_residual,
             "final_residuals %s" % " ".join("%.6g" % r for r in rep.residuals)]
    lines += ["time_%s_seconds %.6f" % (k, v) for k, v in sorted(rep.timings.items())]
    lines += ["", "# concentration cdf: theta fraction"]
    lines += ["cdf %.17g %.17g" % (t, c) for t, c in zip(thetas, cdf)]
    lines += ["", "# fiber transport distance: vertex value"]
    lines += ["w2 %d %.17g" % (v, w2[v]) for v in range(len(w2))]
    lines += ["", "# residual history: iter r_p_mu r_d_mu r_p_nu r_d_nu"]
    lines += ["resid %d %s" % (i, " ".join("%.6g" % r for r in row))
              for i, row in enumerate(rep.residual_history)]
    _write_diagnostics(path("diagnostics.txt"), lines)
    return 0 if rep.converged else 2


def build_parser():
    p = argparse.ArgumentParser(
        prog="minsec",
        description="Directional fields with optimized singularities on "
                    "triangle meshes with boundary.")
    p.add_argument("--mesh", help="triangulated OBJ file")
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--degree", type=int, help="field degree (1 vector, 2 line, 4 cross)")
    p.add_argument("--lambda", dest="lam", type=float, help="singularity sparsity weight")
    p.add_argument("--lambda-field", dest="lambda_field",
                   help="per-vertex lambda file (soft mask)")
    p.add_argument("--radius", type=float, help="fiber radius")
    p.add_argument("--fiber-n", dest="fiber_n", type=int, help="fiber increments (even, >= 8)")
    p.add_argument("--epsilon", type=float, help="residual tolerance")
    p.add_argument("--max-iters", dest="max_iters", type=int)
    p.add_argument("--mask", help="hard-mask region file (vertex or edge lines)")
    p.add_argument("--boundary", help='"tangent" or a per-vertex angle file')
    p.add_argument("--out", help="output directory")
    p.add_argument("--emit-current", dest="emit_current", action="store_true",
                   default=None, help="write per-corner fiber densities")
    p.add_argument("--threads", type=int, help="parallel width of the global step")
    p.add_argument("--deterministic", action="store_true", default=None,
                   help="force single-threaded execution")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        config = validate_config(args.config) if args.config else RunConfig()
        for f in fields(RunConfig):
            value = getattr(args, f.name, None)
            if value is not None:
                setattr(config, f.name, value)
        if args.threads is None and "MINSEC_THREADS" in os.environ:
            config.threads = int(os.environ["MINSEC_THREADS"])
        _check(config)
        return run(config)
    except (ConfigError, OSError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
