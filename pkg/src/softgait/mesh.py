"""Tetrahedral meshes, lumped mass, and the deformation Jacobian map.

Flattened position vectors use axis-major ordering: a vector ``x`` of length
``3n`` stores all x-coordinates, then all y-coordinates, then all
z-coordinates (``x[a * n + i]`` is axis ``a`` of vertex ``i``). This matches
the ``I3 (x) (...)`` block structure of the skinning subspace.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import DegenerateElementError, MeshFormatError

DEFAULT_MU = 1e4
DEFAULT_GAMMA = 1e4
DEFAULT_DENSITY = 1000.0


def flatten_positions(X):
    """(n, 3) -> axis-major (3n,)."""
    return np.ascontiguousarray(np.asarray(X, dtype=float).T).reshape(-1)


def unflatten_positions(x):
    """Axis-major (3n,) -> (n, 3)."""
    x = np.asarray(x, dtype=float)
    return x.reshape(3, -1).T.copy()


def _signed_volumes(vertices, tets):
    p = vertices[tets]
    edges = p[:, 1:, :] - p[:, :1, :]
    return np.linalg.det(edges) / 6.0


@dataclass(eq=False)
class TetMesh:
    """Tet mesh with per-element passive (mu) and actuation (gamma) stiffness.

    Construction validates indices and flips negatively oriented elements so
    every element volume is positive.
    """

    vertices: np.ndarray
    tets: np.ndarray
    mu: np.ndarray = None
    gamma: np.ndarray = None
    density: float = DEFAULT_DENSITY
    flipped: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        V = np.array(self.vertices, dtype=float)
        T = np.array(self.tets, dtype=np.int64)
        if V.ndim != 2 or V.shape[1] != 3:
            raise MeshFormatError(f"vertices must be (n, 3), got {V.shape}")
        if T.ndim != 2 or T.shape[1] != 4:
            raise MeshFormatError(f"tets must be (|T|, 4), got {T.shape}")
        n = len(V)
        if len(T) == 0:
            raise MeshFormatError("mesh has no elements")
        bad = np.flatnonzero((T < 0).any(1) | (T >= n).any(1))
        if bad.size:
            raise MeshFormatError(f"element {bad[0]} references a vertex index outside [0, {n})")
        srt = np.sort(T, axis=1)
        dup = np.flatnonzero((srt[:, 1:] == srt[:, :-1]).any(1))
        if dup.size:
            raise MeshFormatError(f"element {dup[0]} repeats a vertex")
        if not np.all(np.isfinite(V)):
            raise MeshFormatError("non-finite vertex coordinate")

        vol = _signed_volumes(V, T)
        scale = max(np.ptp(V, axis=0).max(), 1e-300)
        tiny = 1e-14 * scale**3
        zero = np.flatnonzero(np.abs(vol) <= tiny)
        if zero.size:
            raise DegenerateElementError(int(zero[0]), float(vol[zero[0]]))
        flipped = vol < 0
        T[flipped] = T[flipped][:, [0, 2, 1, 3]]

        m = len(T)
        mu = np.full(m, DEFAULT_MU if self.mu is None else self.mu, dtype=float) \
            if self.mu is None or np.ndim(self.mu) == 0 else np.array(self.mu, dtype=float)
        gamma = np.full(m, DEFAULT_GAMMA if self.gamma is None else self.gamma, dtype=float) \
            if self.gamma is None or np.ndim(self.gamma) == 0 else np.array(self.gamma, dtype=float)
        if mu.shape != (m,) or gamma.shape != (m,):
            raise MeshFormatError("mu and gamma need one value per element")
        if np.any(mu <= 0):
            raise MeshFormatError("mu must be positive")
        if np.any(gamma < 0):
            raise MeshFormatError("gamma must be non-negative")
        if not self.density > 0:
            raise MeshFormatError("density must be positive")

        self.vertices, self.tets = V, T
        self.mu, self.gamma = mu, gamma
        self.density = float(self.density)
        self.flipped = flipped
        for arr in (V, T, mu, gamma, flipped):
            arr.setflags(write=False)

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_tets(self):
        return len(self.tets)

    def volumes(self):
        return _signed_volumes(self.vertices, self.tets)

    def bbox_diagonal(self):
        return float(np.linalg.norm(np.ptp(self.vertices, axis=0)))

    def with_materials(self, mu=None, gamma=None, density=None):
        return TetMesh(self.vertices, self.tets,
                       self.mu if mu is None else mu,
                       self.gamma if gamma is None else gamma,
                       self.density if density is None else density)

    def translated(self, offset):
        return TetMesh(self.vertices + np.asarray(offset, float), self.tets,
                       self.mu, self.gamma, self.density)


@dataclass(frozen=True, eq=False)
class DiscreteOperators:
    mass: np.ndarray        # (n,) lumped scalar vertex masses
    volumes: np.ndarray     # (|T|,)
    J: sp.csr_matrix        # (9|T|, 3n)
    X: np.ndarray           # (n, 3) rest positions
    grads: np.ndarray       # (|T|, 4, 3) barycentric basis gradients

    @property
    def M(self):
        """3n x 3n diagonal vector-mass matrix."""
        return sp.diags(np.tile(self.mass, 3), format="csr")

    @property
    def mass_vector(self):
        return np.tile(self.mass, 3)

    @property
    def total_mass(self):
        return float(self.mass.sum())

    def deformation_gradients(self, x):
        """Per-element F_e for axis-major positions x, shape (|T|, 3, 3)."""
        return (self.J @ np.asarray(x, float)).reshape(-1, 3, 3)


def basis_gradients(mesh):
    """Constant gradients of the four linear hat functions on every element."""
    p = mesh.vertices[mesh.tets]
    Dm = np.transpose(p[:, 1:, :] - p[:, :1, :], (0, 2, 1))  # columns are edges
    Minv = np.linalg.inv(Dm)
    grads = np.empty((mesh.n_tets, 4, 3))
    grads[:, 1:, :] = Minv
    grads[:, 0, :] = -Minv.sum(axis=1)
    return grads


def build_operators(mesh):
    n, m = mesh.n_vertices, mesh.n_tets
    vol = mesh.volumes()
    grads = basis_gradients(mesh)

    mass = np.zeros(n)
    np.add.at(mass, mesh.tets.ravel(), np.repeat(mesh.density * vol / 4.0, 4))

    # F_e[i, j] = sum_a x[i*n + tet[a]] * grads[e, a, j] at row 9e + 3i + j
    e, i, j, a = np.meshgrid(np.arange(m), np.arange(3), np.arange(3), np.arange(4),
                             indexing="ij")
    rows = 9 * e + 3 * i + j
    cols = i * n + mesh.tets[e, a]
    vals = grads[e, a, j]
    J = sp.csr_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=(9 * m, 3 * n))
    J.sum_duplicates()
    return DiscreteOperators(mass=mass, volumes=vol, J=J, X=mesh.vertices.copy(), grads=grads)


def center_of_mass(x, M):
    """Mass-weighted mean of axis-major positions ``x``.

    ``M`` may be the 3n x 3n diagonal mass matrix, its diagonal, or the (n,)
    scalar vertex masses.
    """
    x = np.asarray(x, float)
    n = x.size // 3
    if sp.issparse(M):
        m = M.diagonal()[:n]
    else:
        M = np.asarray(M, float)
        m = np.diag(M)[:n] if M.ndim == 2 else M[:n]
    return x.reshape(3, n) @ m / m.sum()


def boundary_faces(mesh):
    """Outward-oriented triangles that belong to exactly one element."""
    local = np.array([[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]])
    faces = mesh.tets[:, local].reshape(-1, 3)
    key = np.sort(faces, axis=1)
    _, inverse, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    return faces[counts[inverse.ravel()] == 1]


def surface_vertices(mesh):
    return np.unique(boundary_faces(mesh))


def sample_surface_vertices(mesh, count, up_axis=1):
    """Farthest-point sample of surface vertices, seeded at the lowest one."""
    candidates = surface_vertices(mesh)
    if count >= len(candidates):
        return candidates
    pts = mesh.vertices[candidates]
    first = int(np.lexsort((candidates, pts[:, up_axis]))[0])
    chosen = [first]
    dist = np.linalg.norm(pts - pts[first], axis=1)
    for _ in range(count - 1):
        nxt = int(np.argmax(dist))
        chosen.append(nxt)
        dist = np.minimum(dist, np.linalg.norm(pts - pts[nxt], axis=1))
    return np.sort(candidates[chosen])


def box_mesh(cells=(4, 1, 1), size=(1.0, 0.25, 0.25), origin=(0.0, 0.0, 0.0), **materials):
    """Axis-aligned box split into 6 tets per hexahedral cell."""
    nx, ny, nz = cells
    grid = [np.linspace(o, o + s, c + 1) for o, s, c in zip(origin, size, cells)]
    gx, gy, gz = np.meshgrid(*grid, indexing="ij")
    vertices = np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()])

    def vid(i, j, k):
        return (i * (ny + 1) + j) * (nz + 1) + k

    # Kuhn triangulation of the unit cube: corners indexed by bit pattern (dx, dy, dz)
    paths = [(0, 1, 3, 7), (0, 1, 5, 7), (0, 2, 3, 7), (0, 2, 6, 7), (0, 4, 5, 7), (0, 4, 6, 7)]
    tets = []
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                corner = [vid(i + (b >> 2 & 1), j + (b >> 1 & 1), k + (b & 1)) for b in range(8)]
                tets.extend([corner[a] for a in p] for p in paths)
    return TetMesh(vertices, np.array(tets), **materials)


def load_mesh(path):
    """Parse the ASCII ``tetmesh`` format.

    ::

        # comment
        tetmesh <n> <|T|>
        v x y z            (n lines)
        t i j k l          (|T| lines, 0-based)
        mu <e> <value>     (optional per-element override)
        gamma <e> <value>
        density <value>    (optional)
    """
    header = None
    verts, tets, mu_over, gamma_over = [], [], {}, {}
    density = DEFAULT_DENSITY
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tok = line.split()
            try:
                if tok[0] == "tetmesh":
                    header = (int(tok[1]), int(tok[2]))
                elif header is None:
                    raise MeshFormatError(f"{path}:{lineno}: data before 'tetmesh' header")
                elif tok[0] == "v" and len(tok) == 4:
                    verts.append([float(t) for t in tok[1:]])
                elif tok[0] == "t" and len(tok) == 5:
                    tets.append([int(t) for t in tok[1:]])
                elif tok[0] in ("mu", "gamma") and len(tok) == 3:
                    target = mu_over if tok[0] == "mu" else gamma_over
                    target[int(tok[1])] = float(tok[2])
                elif tok[0] == "density" and len(tok) == 2:
                    density = float(tok[1])
                else:
                    raise MeshFormatError(f"{path}:{lineno}: cannot parse {line!r}")
            except (ValueError, IndexError) as exc:
                if isinstance(exc, MeshFormatError):
                    raise
                raise MeshFormatError(f"{path}:{lineno}: cannot parse {line!r}") from exc
    if header is None:
        raise MeshFormatError(f"{path}: missing 'tetmesh' header")
    if (len(verts), len(tets)) != header:
        raise MeshFormatError(f"{path}: header declares {header}, found "
                              f"{len(verts)} vertices and {len(tets)} tets")
    mu = np.full(len(tets), DEFAULT_MU)
    gamma = np.full(len(tets), DEFAULT_GAMMA)
    for target, over, label in ((mu, mu_over, "mu"), (gamma, gamma_over, "gamma")):
        for e, val in over.items():
            if not 0 <= e < len(tets):
                raise MeshFormatError(f"{path}: {label} override for missing element {e}")
            target[e] = val
    return TetMesh(np.array(verts, float).reshape(-1, 3), np.array(tets, np.int64).reshape(-1, 4),
                   mu, gamma, density)


def save_mesh(mesh, path):
    with open(path, "w") as fh:
        fh.write(f"tetmesh {mesh.n_vertices} {mesh.n_tets}\n")
        for v in mesh.vertices:
            fh.write("v {!r} {!r} {!r}\n".format(*map(float, v)))
        for t in mesh.tets:
            fh.write("t {} {} {} {}\n".format(*map(int, t)))
        fh.write(f"density {mesh.density!r}\n")
        for e in range(mesh.n_tets):
            if mesh.mu[e] != DEFAULT_MU:
                fh.write(f"mu {e} {float(mesh.mu[e])!r}\n")
            if mesh.gamma[e] != DEFAULT_GAMMA:
                fh.write(f"gamma {e} {float(mesh.gamma[e])!r}\n")


def write_obj(path, X, faces):
    with open(path, "w") as fh:
        for p in np.asarray(X, float):
            fh.write("v {:.9g} {:.9g} {:.9g}\n".format(*p))
        for f in np.asarray(faces):
            fh.write("f {} {} {}\n".format(*(int(i) + 1 for i in f)))
