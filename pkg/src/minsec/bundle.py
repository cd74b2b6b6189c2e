"""Fiber sampling, vertical Fourier transforms, and boundary data on the circle bundle."""

from dataclasses import dataclass

import numpy as np

#: Vertical density of the reference connection form: constant 1/(2*pi),
#: so that every fiber integrates to one.
TAU_BAR_VERTICAL = 1.0 / (2.0 * np.pi)


@dataclass(frozen=True)
class FiberDiscretization:
    """Uniform sampling of the circle fiber.

    ``n`` increments at angles ``2*pi*m/n`` keep frequencies up to
    ``k_max = n/2 - 1`` (the Nyquist bin is dropped so every retained
    frequency has a conjugate partner).
    """

    n: int
    radius: float = 1.0

    def __post_init__(self):
        if self.n < 8 or self.n % 2:
            raise ValueError("fiber increment count must be even and >= 8, got %d" % self.n)
        if self.radius <= 0:
            raise ValueError("fiber radius must be positive")

    @property
    def k_max(self):
        return self.n // 2 - 1

    @property
    def theta(self):
        return 2.0 * np.pi * np.arange(self.n) / self.n

    @property
    def length(self):
        return 2.0 * np.pi * self.radius


def fourier_forward(samples, k_max):
    """Vertical Fourier coefficients ``c_k = (1/N) sum_m x_m e^{-ik theta_m}``.

    Parameters
    ----------
    samples : (..., n) array_like
        Values on the uniform fiber grid (last axis).
    k_max : int
        Largest retained frequency.

    Returns
    -------
    (..., 2*k_max + 1) ndarray of complex
        Coefficients ordered ``k = -k_max .. k_max`` (index ``k + k_max``).
    """
    x = np.asarray(samples)
    n = x.shape[-1]
    if n <= 2 * k_max:
        raise ValueError("need more than 2*k_max samples, got %d for k_max=%d"
                         % (n, k_max))
    theta = 2.0 * np.pi * np.arange(n) / n
    k = np.arange(-k_max, k_max + 1)
    basis = np.exp(-1j * np.outer(theta, k)) / n       # (n, 2K+1)
    return x @ basis


def fourier_inverse(coeffs, n):
    """Evaluate ``x_m = sum_k c_k e^{ik theta_m}`` on the ``n``-point grid."""
    c = np.asarray(coeffs)
    k_max = (c.shape[-1] - 1) // 2
    theta = 2.0 * np.pi * np.arange(n) / n
    k = np.arange(-k_max, k_max + 1)
    basis = np.exp(1j * np.outer(k, theta))            # (2K+1, n)
    return c @ basis


def fejer_delta(gamma0, k_max, theta):
    """Nonnegative kernel ``sum_{|k|<=K} (1 - |k|/K) e^{ik(theta - gamma0)}``.

    Peaks at ``theta = gamma0`` with value ``K``; its mean over the circle
    is 1 (only the zero frequency survives integration).
    """
    x = np.asarray(theta) - gamma0
    k = np.arange(1, k_max + 1)
    weights = 1.0 - k / k_max
    return 1.0 + 2.0 * np.cos(np.multiply.outer(x, k)) @ weights


@dataclass(frozen=True)
class ConstantCovector:
    """A covector field with the same horizontal/vertical value everywhere."""

    horizontal: tuple
    vertical: float


def make_tau_bar(fd):
    """Reference covector: zero horizontal part, vertical ``1/(2*pi)``."""
    return ConstantCovector(horizontal=(0.0, 0.0), vertical=TAU_BAR_VERTICAL)


def make_kappa_bar(atlas, degree):
    """Per-interior-edge curvature density ``degree * kappa_e / (2*pi)``.

    Only interior vertices contribute: a boundary vertex's angle defect is
    the turning of the boundary, which the boundary winding data already
    accounts for, so it enters the edge mean as zero. On a flat mesh
    (polygonal boundary included) the result is identically zero.
    """
    mesh = atlas.mesh
    gauss = np.where(mesh.is_boundary_vertex, 0.0, atlas.vertex_curvature)
    edge_mean = 0.5 * (gauss[mesh.edges[:, 0]] + gauss[mesh.edges[:, 1]])
    return degree * edge_mean[mesh.interior_edges] / (2.0 * np.pi)


@dataclass
class BoundaryData:
    """Fixed boundary values for the vertical Fourier coefficients.

    ``coef[k - 1]`` holds the per-boundary-vertex value for frequency
    ``k`` in ``1..k_max``; negative frequencies are conjugates, and the
    zero frequency is left free (it is pinned by the boundary coupling of
    the frequency-zero system, not by a Dirichlet value). The boundary
    angle data is a Dirac on each boundary fiber, approximated by the
    Fejer kernel normalized to unit fiber mass:

        f^(k) = (1 - |k|/K) e^{-ik gamma0} / (2*pi*i*k).

    ``edge_winding`` carries the unwrapped increment of ``gamma0`` along
    each directed boundary edge (surface on the left), measured after
    moving both endpoint angles into the shared face frame, in units of
    full turns.
    """

    vertex_ids: np.ndarray
    gamma0: np.ndarray
    k_max: int
    coef: np.ndarray
    edge_winding: np.ndarray

    def coefficient(self, k):
        """Boundary values for frequency ``k`` (any sign, 0 < |k| <= k_max)."""
        if not 0 < abs(k) <= self.k_max:
            raise ValueError("frequency %d outside 1..%d" % (k, self.k_max))
        row = self.coef[abs(k) - 1]
        return row if k > 0 else np.conj(row)


def boundary_tangent_angles(atlas):
    """Angle of the oriented boundary tangent in each boundary vertex frame."""
    mesh = atlas.mesh
    angles = {}
    for loop in mesh.boundary_loops:
        pts = mesh.vertices[loop]
        fwd = np.roll(pts, -1, axis=0) - pts
        bwd = pts - np.roll(pts, 1, axis=0)
        tangent = fwd / np.linalg.norm(fwd, axis=1, keepdims=True) \
            + bwd / np.linalg.norm(bwd, axis=1, keepdims=True)
        for i, v in enumerate(loop):
            t = tangent[i]
            n = mesh.vertex_normal[v]
            t = t - np.dot(t, n) * n
            if np.linalg.norm(t) < 1e-12:
                t = fwd[i] - np.dot(fwd[i], n) * n
            e1, e2 = atlas.vertex_frame[v]
            angles[int(v)] = float(np.arctan2(np.dot(t, e2), np.dot(t, e1)))
    return angles


def make_boundary_data(atlas, spec, degree, k_max):
    """Assemble :class:`BoundaryData` from a boundary angle source.

    Parameters
    ----------
    atlas : TransportAtlas
    spec : str or dict
        ``"tangent"`` aligns the field with the oriented boundary, or a
        mapping ``vertex index -> field angle`` covering every boundary
        vertex (angles are plain field angles; they are multiplied by the
        degree here).
    degree : int
        Directional field degree (1 vector, 2 line, 4 cross, ...).
    k_max : int
        Largest retained vertical frequency.
    """
    mesh = atlas.mesh
    if isinstance(spec, str):
        if spec != "tangent":
            raise ValueError("unknown boundary spec %r" % spec)
        field_angle = boundary_tangent_angles(atlas)
    else:
        field_angle = {int(v): float(a) for v, a in dict(spec).items()}
        missing = [int(v) for loop in mesh.boundary_loops for v in loop
                   if int(v) not in field_angle]
        if missing:
            raise ValueError("boundary angles missing for vertices %s" % missing[:8])

    vertex_ids = np.concatenate(mesh.boundary_loops)
    gamma0 = np.array([np.mod(degree * field_angle[int(v)], 2 * np.pi) for v in vertex_ids])

    k = np.arange(1, k_max + 1)
    weights = (1.0 - k / k_max) / (2.0 * np.pi * 1j * k)
    coef = weights[:, None] * np.exp(-1j * np.outer(k, gamma0))

    # winding of gamma0 along each boundary halfedge, compared in the
    # shared face frame and wrapped to the nearest representative
    g_of = {int(v): g for v, g in zip(vertex_ids, gamma0)}
    winding = []
    for v, w, f, _ in mesh.boundary_halfedges():
        tri = mesh.triangles[f]
        jv = int(np.nonzero(tri == v)[0][0])
        jw = int(np.nonzero(tri == w)[0][0])
        av = g_of[v] + degree * np.angle(atlas.transport[f, jv])
        aw = g_of[w] + degree * np.angle(atlas.transport[f, jw])
        delta = np.mod(aw - av + np.pi, 2 * np.pi) - np.pi
        winding.append(delta / (2 * np.pi))

    return BoundaryData(vertex_ids=vertex_ids, gamma0=gamma0, k_max=k_max,
                        coef=coef, edge_winding=np.array(winding))
