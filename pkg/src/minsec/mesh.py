"""Triangle meshes with boundary: loading, indexing, frames, and parallel transport."""

import numpy as np


class MeshError(ValueError):
    """Raised when an input mesh violates a structural precondition."""


def _unit(v, axis=-1):
    n = np.linalg.norm(v, axis=axis, keepdims=True)
    return v / n


class TriMesh:
    """Indexed triangle mesh with at least one boundary loop.

    Parameters
    ----------
    vertices : (n_v, 3) array_like
        Vertex positions.
    triangles : (n_f, 3) array_like
        Vertex index triples, counterclockwise with respect to the
        outward normal.

    Attributes
    ----------
    vertices : (n_v, 3) ndarray
    triangles : (n_f, 3) ndarray
    edges : (n_e, 2) ndarray
        Canonical undirected vertex pairs, sorted so ``edges[:, 0] < edges[:, 1]``.
    edge_faces : (n_e, 2) ndarray
        Incident face indices per edge; second entry is -1 on the boundary.
    interior_edges : (n_ie,) ndarray
        Indices into ``edges`` of edges with two incident faces.
    boundary_edges : (n_be,) ndarray
        Indices into ``edges`` of edges with one incident face.
    boundary_loops : list of ndarray
        Ordered vertex cycles, oriented consistently with triangle
        orientation (surface on the left).
    face_area, vertex_area, total_area
        Triangle areas, one-third incident-area vertex masses, and their sum.
    face_normal, vertex_normal
        Unit face normals and area-weighted unit vertex normals.
    corner_angle : (n_f, 3) ndarray
        Interior angle at each triangle corner.
    """

    def __init__(self, vertices, triangles):
        self.vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
        if self.triangles.size and self.triangles.max() >= len(self.vertices):
            raise MeshError("triangle references vertex %d beyond vertex count %d"
                            % (self.triangles.max(), len(self.vertices)))
        if len(self.triangles) == 0:
            raise MeshError("mesh has no triangles")
        self._check_distinct()
        self._build_geometry()
        self._build_edges()
        self._build_boundary_loops()

    # -- construction ------------------------------------------------------

    def _check_distinct(self):
        t = self.triangles
        bad = (t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 2] == t[:, 0])
        if bad.any():
            raise MeshError("triangle %d has repeated vertices" % np.nonzero(bad)[0][0])

    def _build_geometry(self):
        p = self.vertices[self.triangles]           # (n_f, 3, 3)
        e01 = p[:, 1] - p[:, 0]
        e02 = p[:, 2] - p[:, 0]
        cross = np.cross(e01, e02)
        cn = np.linalg.norm(cross, axis=1)
        self.face_area = 0.5 * cn
        self.total_area = float(self.face_area.sum())
        floor = 1e-12 * self.total_area / len(self.triangles)
        small = self.face_area < floor
        if small.any():
            raise MeshError("triangle %d is degenerate (area %.3e below floor %.3e)"
                            % (np.nonzero(small)[0][0], self.face_area[small][0], floor))
        self.face_normal = cross / cn[:, None]

        self.vertex_area = np.zeros(len(self.vertices))
        np.add.at(self.vertex_area, self.triangles.ravel(),
                  np.repeat(self.face_area / 3.0, 3))

        weighted = np.zeros_like(self.vertices)
        np.add.at(weighted, self.triangles.ravel(),
                  np.repeat(self.face_normal * self.face_area[:, None], 3, axis=0))
        norms = np.linalg.norm(weighted, axis=1)
        self.vertex_normal = np.where(norms[:, None] > 0, weighted / np.maximum(norms, 1e-300)[:, None], 0.0)
        self._vertex_normal_norm = norms

        # interior angle at corner j, between edges to the other two vertices
        self.corner_angle = np.empty((len(self.triangles), 3))
        for j in range(3):
            u = p[:, (j + 1) % 3] - p[:, j]
            v = p[:, (j + 2) % 3] - p[:, j]
            cosang = np.einsum("ij,ij->i", u, v) / (
                np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
            self.corner_angle[:, j] = np.arccos(np.clip(cosang, -1.0, 1.0))

    def _build_edges(self):
        t = self.triangles
        # edge j of a face is opposite its corner j
        raw = np.concatenate([t[:, [1, 2]], t[:, [2, 0]], t[:, [0, 1]]])
        canon = np.sort(raw, axis=1)
        self.edges, inv = np.unique(canon, axis=0, return_inverse=True)
        # face_edge[f, j] = global edge id opposite corner j
        self.face_edge = inv.reshape(3, -1).T.copy()

        n_e = len(self.edges)
        counts = np.bincount(inv, minlength=n_e)
        if counts.max() > 2:
            raise MeshError("non-manifold edge %d (%d incident faces)"
                            % (int(np.argmax(counts)), int(counts.max())))
        self.edge_faces = np.full((n_e, 2), -1, dtype=np.int64)
        fill = np.zeros(n_e, dtype=np.int64)
        face_ids = np.tile(np.arange(len(t)), 3)
        for eid, fid in zip(inv, face_ids):
            self.edge_faces[eid, fill[eid]] = fid
            fill[eid] += 1
        self.interior_edges = np.nonzero(counts == 2)[0]
        self.boundary_edges = np.nonzero(counts == 1)[0]
        self.is_boundary_vertex = np.zeros(len(self.vertices), dtype=bool)
        self.is_boundary_vertex[self.edges[self.boundary_edges].ravel()] = True

    def _build_boundary_loops(self):
        if len(self.boundary_edges) == 0:
            raise MeshError("no boundary loop (closed surfaces are not supported)")
        t = self.triangles
        # directed boundary halfedges a->b follow face orientation (face on the left)
        nxt = {}
        self._boundary_halfedge_face = {}
        for eid in self.boundary_edges:
            f = self.edge_faces[eid, 0]
            j = int(np.nonzero(self.face_edge[f] == eid)[0][0])
            a, b = int(t[f, (j + 1) % 3]), int(t[f, (j + 2) % 3])
            if a in nxt:
                raise MeshError("non-manifold boundary vertex %d" % a)
            nxt[a] = b
            self._boundary_halfedge_face[(a, b)] = (int(f), eid)
        self.boundary_loops = []
        seen = set()
        for start in sorted(nxt):
            if start in seen:
                continue
            loop = [start]
            seen.add(start)
            cur = nxt[start]
            while cur != start:
                loop.append(cur)
                seen.add(cur)
                cur = nxt[cur]
            self.boundary_loops.append(np.array(loop, dtype=np.int64))

    # -- queries -----------------------------------------------------------

    def boundary_halfedges(self):
        """Directed boundary edges in loop order.

        Returns
        -------
        list of (v, w, face, edge_id)
            One entry per boundary edge, traversed with the surface on
            the left, concatenated loop by loop.
        """
        out = []
        for loop in self.boundary_loops:
            for i in range(len(loop)):
                v, w = int(loop[i]), int(loop[(i + 1) % len(loop)])
                f, eid = self._boundary_halfedge_face[(v, w)]
                out.append((v, w, f, eid))
        return out

    def euler_characteristic(self):
        return len(self.vertices) - len(self.edges) + len(self.triangles)


def load_mesh(path):
    """Read a triangulated OBJ file into a :class:`TriMesh`.

    Only ``v`` and ``f`` records are used; texture and normal indices in
    face records are ignored. Faces must be triangles and indices are
    1-based (negative indices count from the end, per the OBJ spec).
    """
    vertices = []
    faces = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                if len(parts) < 4:
                    raise MeshError("%s:%d: malformed vertex record" % (path, lineno))
                vertices.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = []
                for tok in parts[1:]:
                    first = tok.split("/")[0]
                    if not first:
                        raise MeshError("%s:%d: malformed face record" % (path, lineno))
                    i = int(first)
                    idx.append(i - 1 if i > 0 else len(vertices) + i)
                if len(idx) != 3:
                    raise MeshError("%s:%d: face has %d vertices; only triangles are supported"
                                    % (path, lineno, len(idx)))
                faces.append(idx)
    if not vertices:
        raise MeshError("%s: no vertices found" % path)
    return TriMesh(vertices, faces)


class TransportAtlas:
    """Intrinsic frames, parallel transport, and angle-defect curvature.

    Attributes
    ----------
    vertex_frame : (n_v, 2, 3) ndarray
        Orthonormal tangent pair per vertex (rows are the two axes).
    face_frame : (n_f, 2, 3) ndarray
        Orthonormal tangent pair per face.
    transport : (n_f, 3) ndarray of complex
        Unit transport coefficient from the vertex frame at corner j
        into the face frame.
    vertex_curvature : (n_v,) ndarray
        Angle defect divided by vertex area. Interior vertices use the
        flat reference 2*pi; boundary vertices use pi, so flat-disk
        boundaries carry zero curvature.
    edge_curvature : (n_e,) ndarray
        Unweighted mean of the endpoint curvatures.
    """

    def __init__(self, mesh, vertex_frame, face_frame, transport):
        self.mesh = mesh
        self.vertex_frame = vertex_frame
        self.face_frame = face_frame
        self.transport = transport
        self._curvature()

    def _curvature(self):
        mesh = self.mesh
        angle_sum = np.zeros(len(mesh.vertices))
        np.add.at(angle_sum, mesh.triangles.ravel(), mesh.corner_angle.ravel())
        reference = np.where(mesh.is_boundary_vertex, np.pi, 2.0 * np.pi)
        self.vertex_defect = reference - angle_sum
        self.vertex_curvature = self.vertex_defect / mesh.vertex_area
        kv = self.vertex_curvature
        self.edge_curvature = 0.5 * (kv[mesh.edges[:, 0]] + kv[mesh.edges[:, 1]])


def _principal_rotations(n_from, n_to):
    """Minimal rotations taking unit vectors ``n_from`` onto ``n_to`` (Rodrigues)."""
    axis = np.cross(n_from, n_to)
    s = np.linalg.norm(axis, axis=-1)
    c = np.einsum("...i,...i->...", n_from, n_to)
    if np.any(c < -0.999999):
        raise MeshError("vertex and face normals are antipodal; mesh is badly folded")
    # R = I + [axis]_x + [axis]_x^2 / (1 + c), stable for small angles
    K = np.zeros(n_from.shape[:-1] + (3, 3))
    K[..., 0, 1] = -axis[..., 2]
    K[..., 0, 2] = axis[..., 1]
    K[..., 1, 0] = axis[..., 2]
    K[..., 1, 2] = -axis[..., 0]
    K[..., 2, 0] = -axis[..., 1]
    K[..., 2, 1] = axis[..., 0]
    eye = np.broadcast_to(np.eye(3), K.shape)
    return eye + K + np.einsum("...ij,...jk->...ik", K, K) / (1.0 + c)[..., None, None]


def build_transport(mesh, frame_rotation=None):
    """Construct frames and unit-complex parallel transport for ``mesh``.

    The vertex frame's first axis is the first incident edge (in face scan
    order) projected to the tangent plane of the area-weighted vertex
    normal; the face frame's first axis is the first triangle edge. The
    transport coefficient for corner j of face T is read off from the 2x2
    matrix of the principal rotation between the two frames, which is a
    rotation matrix [[u, -v], [v, u]] mapped to u + iv.

    Parameters
    ----------
    mesh : TriMesh
    frame_rotation : (n_v,) array_like, optional
        Extra in-plane rotation (radians, counterclockwise about the
        vertex normal) applied to each vertex frame. Useful for testing
        frame independence.

    Returns
    -------
    TransportAtlas
    """
    nv = len(mesh.vertices)
    bad = mesh._vertex_normal_norm <= 1e-14 * mesh.total_area
    if bad.any():
        raise MeshError("cannot build a frame at vertex %d: zero normal" % np.nonzero(bad)[0][0])

    t = mesh.triangles
    p = mesh.vertices

    vertex_e1 = np.zeros((nv, 3))
    assigned = np.zeros(nv, dtype=bool)
    order_v = t.ravel()
    order_next = t[:, [1, 2, 0]].ravel()
    for a, b in zip(order_v, order_next):
        if assigned[a]:
            continue
        n = mesh.vertex_normal[a]
        e = p[b] - p[a]
        e = e - np.dot(e, n) * n
        ln = np.linalg.norm(e)
        if ln < 1e-14:
            continue
        vertex_e1[a] = e / ln
        assigned[a] = True
    if not assigned.all():
        raise MeshError("cannot build a frame at vertex %d: all incident edges "
                        "project to zero" % np.nonzero(~assigned)[0][0])
    if frame_rotation is not None:
        ang = np.asarray(frame_rotation, dtype=np.float64)
        e2 = np.cross(mesh.vertex_normal, vertex_e1)
        vertex_e1 = np.cos(ang)[:, None] * vertex_e1 + np.sin(ang)[:, None] * e2
    vertex_frame = np.stack([vertex_e1, np.cross(mesh.vertex_normal, vertex_e1)], axis=1)

    face_e1 = _unit(p[t[:, 1]] - p[t[:, 0]])
    face_frame = np.stack([face_e1, np.cross(mesh.face_normal, face_e1)], axis=1)

    # transport coefficient per corner: 2x2 block of F_T R_{a->T} F_a^T
    corner_v = t.ravel()
    n_from = mesh.vertex_normal[corner_v]
    n_to = np.repeat(mesh.face_normal, 3, axis=0)
    R = _principal_rotations(n_from, n_to)
    Fa = vertex_frame[corner_v]                      # (3 n_f, 2, 3)
    Ft = np.repeat(face_frame, 3, axis=0)
    M = np.einsum("cij,cjk,clk->cil", Ft, R, Fa)     # (3 n_f, 2, 2)
    u = 0.5 * (M[:, 0, 0] + M[:, 1, 1])
    v = 0.5 * (M[:, 1, 0] - M[:, 0, 1])
    coeff = u + 1j * v
    coeff /= np.abs(coeff)
    return TransportAtlas(mesh, vertex_frame, face_frame, coeff.reshape(len(t), 3))


def transport_power(atlas, vertex, face, k, degree):
    """Frequency-``k`` degree-``degree`` transport entry: the unit coefficient raised to ``-k*degree``.

    Raises
    ------
    MeshError
        If ``vertex`` is not incident on ``face``.
    """
    tri = atlas.mesh.triangles[face]
    where = np.nonzero(tri == vertex)[0]
    if len(where) == 0:
        raise MeshError("vertex %d is not incident on face %d" % (vertex, face))
    return atlas.transport[face, where[0]] ** (-k * degree)
