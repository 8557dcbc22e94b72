"""Modal analysis: skinning eigenweights for the simulation subspace and
elastic vibration modes for the actuation subspace.

Both eigenproblems are solved densely by scaling with the inverse square
root of the (diagonal) lumped mass and calling a symmetric eigensolver. This
is intended for desk-scale meshes of a few thousand vertices.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import EigenSolveError
from .mesh import basis_gradients, build_operators, flatten_positions

RIGID_CUTOFF = 1e-8


def _diagonal(M):
    if sp.issparse(M):
        return np.asarray(M.diagonal(), float)
    M = np.asarray(M, float)
    return np.diag(M).copy() if M.ndim == 2 else M.copy()


def _fix_signs(V):
    """Flip each column so its largest-magnitude entry is positive."""
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return V * signs


def _lowest_generalized(K, mass, count):
    """Lowest ``count`` eigenpairs of K v = lambda diag(mass) v."""
    dim = K.shape[0]
    s = 1.0 / np.sqrt(mass)
    Kd = K.toarray() if sp.issparse(K) else np.asarray(K, float)
    A = Kd * s[:, None] * s[None, :]
    A = 0.5 * (A + A.T)
    try:
        lam, V = sla.eigh(A, subset_by_index=[0, min(count, dim) - 1], driver="evr")
    except (sla.LinAlgError, ValueError) as exc:
        raise EigenSolveError(f"symmetric eigensolve failed: {exc}") from exc
    return lam, V * s[:, None], A


def scalar_laplacian(mesh):
    """mu-weighted P1 stiffness matrix: sum_e mu_e V_e grad(phi_a) . grad(phi_b)."""
    grads = basis_gradients(mesh)
    w = mesh.mu * mesh.volumes()
    local = np.einsum("e,eai,ebi->eab", w, grads, grads)
    rows = np.repeat(mesh.tets, 4, axis=1).ravel()
    cols = np.tile(mesh.tets, (1, 4)).ravel()
    n = mesh.n_vertices
    L = sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))
    L.sum_duplicates()
    return L


@dataclass(frozen=True, eq=False)
class SkinningWeights:
    W: np.ndarray          # (n, w), mass-orthonormal
    eigenvalues: np.ndarray


def compute_skinning_weights(L, Ms, w):
    n = L.shape[0]
    if not 1 <= w <= n:
        raise EigenSolveError(f"requested {w} skinning weights for {n} vertices")
    mass = _diagonal(Ms)
    lam, W, _ = _lowest_generalized(L, mass, w)
    W = _fix_signs(W)
    # the first eigenfunction is the constant; snap roundoff so affine maps are exact
    c = 1.0 / np.sqrt(mass.sum())
    if np.max(np.abs(W[:, 0] - c)) < 1e-8 * c:
        W[:, 0] = c
    return SkinningWeights(W=W, eigenvalues=lam)


@dataclass(frozen=True, eq=False)
class SubspaceBasis:
    """Linear blend skinning subspace ``x = B z``.

    Column ``c * 4w + 4k + j`` of the unpruned basis is weight ``k`` times the
    homogeneous rest coordinate ``j`` placed on axis ``c``; the matching
    entry of ``z`` is row ``c``, column ``j`` of handle ``k``'s 3x4 affine
    transform. ``columns`` lists the retained unpruned columns (all of them
    unless some were linearly dependent).
    """

    B: np.ndarray
    W: np.ndarray
    X: np.ndarray
    columns: np.ndarray

    @property
    def n(self):
        return len(self.X)

    @property
    def r(self):
        return self.B.shape[1]

    @property
    def n_weights(self):
        return self.W.shape[1]

    def positions(self, z):
        return self.B @ z

    def fit(self, x):
        """Least-squares reduced coordinates for axis-major positions x."""
        return np.linalg.lstsq(self.B, x, rcond=None)[0]

    def z_from_handles(self, handles):
        """Reduced coordinates for per-weight (w, 3, 4) affine handles."""
        handles = np.asarray(handles, float).reshape(self.n_weights, 3, 4)
        full = np.transpose(handles, (1, 0, 2)).reshape(-1)
        if len(self.columns) == full.size:
            return full
        Xh = np.column_stack([self.X, np.ones(self.n)])
        x = np.einsum("ik,kcj,ij->ci", self.W, handles, Xh).reshape(-1)
        return self.fit(x)

    def rest_z(self):
        w = self.n_weights
        handles = np.zeros((w, 3, 4))
        handles[0, :, :3] = np.eye(3) / self.W[0, 0]
        if np.allclose(self.W[:, 0], self.W[0, 0], rtol=0, atol=1e-12 * abs(self.W[0, 0])):
            return self.z_from_handles(handles)
        return self.fit(flatten_positions(self.X))


def build_lbs_jacobian(W, X, rank_tol=1e-10):
    """Assemble B = I3 (x) ((W (x) 1_4^T) . (1_w^T (x) [X 1])).

    Linearly dependent columns (only possible when 12w approaches 3n) are
    dropped with a pivoted QR so B has full column rank.
    """
    W = np.asarray(W, float)
    X = np.asarray(X, float)
    n, w = W.shape
    Xh = np.column_stack([X, np.ones(n)])
    inner = (W[:, :, None] * Xh[:, None, :]).reshape(n, 4 * w)

    keep = np.arange(4 * w)
    if 4 * w > n or w > 1:
        _, R, piv = sla.qr(inner, mode="economic", pivoting=True)
        d = np.abs(np.diag(R))
        rank = int(np.sum(d > rank_tol * d[0])) if d.size else 0
        if rank < 4 * w:
            keep = np.sort(piv[:rank])
    inner = inner[:, keep]
    B = np.kron(np.eye(3), inner)
    columns = np.concatenate([c * 4 * w + keep for c in range(3)])
    return SubspaceBasis(B=B, W=W, X=X.copy(), columns=columns)


_SYM = 0.5 * (np.eye(9) + np.eye(9)[[0, 3, 6, 1, 4, 7, 2, 5, 8]])


def elastic_hessian(mesh, ops=None):
    """Rest-state Hessian of the ARAP energy 1/2 sum mu V |F - R(F)|^2.

    At the rest shape the best-fit rotation follows the skew part of the
    displacement gradient, so the Hessian penalizes only its symmetric part:
    H = J^T (diag(mu V) (x) P_sym) J. Its null space is the six rigid modes.
    """
    ops = ops or build_operators(mesh)
    w = mesh.mu * ops.volumes
    blocks = sp.kron(sp.diags(w), sp.csr_matrix(_SYM), format="csr")
    H = (ops.J.T @ blocks @ ops.J).tocsr()
    return 0.5 * (H + H.T)


@dataclass(frozen=True, eq=False)
class ActuationBasis:
    D: np.ndarray            # (3n, m) mass-orthonormal vibration modes
    eigenvalues: np.ndarray  # (m,)
    Dbar: np.ndarray         # (3n, m + 1) = [D x0]
    n_rigid: int

    @property
    def m(self):
        return self.D.shape[1]


def compute_actuation_modes(H, M, m, x0, cutoff=RIGID_CUTOFF):
    """Lowest ``m`` non-rigid modes of H D = M D Lambda.

    Eigenvalues below ``cutoff * lambda_max`` are treated as rigid and
    discarded.
    """
    mass = _diagonal(M)
    dim = H.shape[0]
    if m < 0:
        raise EigenSolveError("mode count must be non-negative")
    Hd = H.toarray() if sp.issparse(H) else np.asarray(H, float)
    s = 1.0 / np.sqrt(mass)
    A = Hd * s[:, None] * s[None, :]
    A = 0.5 * (A + A.T)
    try:
        lam_max = sla.eigh(A, eigvals_only=True, subset_by_index=[dim - 1, dim - 1])[0]
    except sla.LinAlgError as exc:
        raise EigenSolveError(f"symmetric eigensolve failed: {exc}") from exc
    threshold = cutoff * lam_max

    want = min(dim, m + 7)
    while True:
        lam, V = sla.eigh(A, subset_by_index=[0, want - 1], driver="evr")
        n_rigid = int(np.sum(lam < threshold))
        complete = lam[-1] >= threshold and n_rigid + m <= want
        if complete or want == dim:
            break
        want = min(dim, 2 * want)
    if n_rigid + m > dim:
        raise EigenSolveError(f"requested {m} modes but only {dim - n_rigid} non-rigid modes exist")
    lam = lam[n_rigid:n_rigid + m]
    D = _fix_signs(V[:, n_rigid:n_rigid + m] * s[:, None])
    x0 = np.asarray(x0, float).reshape(-1, 1)
    return ActuationBasis(D=D, eigenvalues=lam, Dbar=np.hstack([D, x0]), n_rigid=n_rigid)
