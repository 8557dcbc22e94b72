"""Element clustering and the precomputation behind resolution-independent
stepping.

Tensor layouts (all dense, C order)::

    Htensor  (|Ca|, 3, 3, r, m+1)   H_c = Htensor[c] contracted with z, a_bar
    Kv       (r, 3, 3, |Cp|)        f_v = Kv : R
    Otensor  (3, 3, r, m+1, |Ca|)   f_a = (Otensor : Omega) . a_bar

``f_v`` and ``f_a`` are the linear coefficients of the quadratic energy
1/2 z^T Q z + z^T f, so at fixed rotations the global step solves
Q z = -(f_v + f_a) + (forces).
"""

from dataclasses import dataclass, field
import logging

import numpy as np
import scipy.linalg as sla

from .containers import read_container, write_container
from .errors import ArtifactError, FactorizationError

log = logging.getLogger(__name__)

DEFAULT_GRAVITY = (0.0, -9.8, 0.0)
MODEL_MAGIC = "SGMODEL"


@dataclass(frozen=True, eq=False)
class ClusterMap:
    assignment: np.ndarray
    count: int
    kind: str = "passive"

    def members(self, c):
        return np.flatnonzero(self.assignment == c)

    def selection(self):
        """|T| x |C| 0/1 selection matrix."""
        P = np.zeros((len(self.assignment), self.count))
        P[np.arange(len(self.assignment)), self.assignment] = 1.0
        return P


def element_features(tets, weights, eigenvalues=None, centroids=None):
    """Per-element clustering features from skinning eigenweights.

    Each element gets the average of its vertices' weights; the constant
    first weight is dropped and the rest are scaled by 1/sqrt(lambda). With
    a single weight there is nothing to cluster on, so rest centroids are
    used instead.
    """
    W = np.asarray(weights, float)
    if W.shape[1] < 2:
        if centroids is None:
            raise ValueError("need centroids when only the constant weight is present")
        return np.asarray(centroids, float)
    feats = W[tets].mean(axis=1)[:, 1:]
    if eigenvalues is not None:
        feats = feats / np.sqrt(np.maximum(np.asarray(eigenvalues[1:], float), 1e-300))
    return feats


def _kmeans_pp(X, k, rng):
    centers = [int(rng.integers(len(X)))]
    d2 = np.sum((X - X[centers[0]]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            nxt = int(rng.integers(len(X)))
        else:
            nxt = int(rng.choice(len(X), p=d2 / total))
        centers.append(nxt)
        d2 = np.minimum(d2, np.sum((X - X[nxt]) ** 2, axis=1))
    return X[centers].copy()


def _relabel(assign):
    _, first = np.unique(assign, return_index=True)
    order = np.argsort(first)
    lut = np.empty(order.size, dtype=np.int64)
    lut[np.unique(assign)[order]] = np.arange(order.size)
    return lut[assign]


def cluster_elements(features, count, seed=0, kind="passive", max_iter=100):
    """Deterministic k-means (k-means++ init, Lloyd iterations).

    Empty clusters are refilled with the element farthest from its center
    among clusters that can spare one. Labels are renumbered by first
    occurrence so element 0 is always in cluster 0.
    """
    X = np.asarray(features, float)
    if X.ndim == 1:
        X = X[:, None]
    n = len(X)
    if not 1 <= count <= n:
        raise ValueError(f"cluster count {count} must lie in [1, {n}]")
    if count == n:
        return ClusterMap(np.arange(n), n, kind)
    if count == 1:
        return ClusterMap(np.zeros(n, dtype=np.int64), 1, kind)

    rng = np.random.default_rng(seed)
    centers = _kmeans_pp(X, count, rng)
    assign = np.full(n, -1)
    for _ in range(max_iter):
        d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(-1)
        new = np.argmin(d2, axis=1)
        dist = d2[np.arange(n), new]
        sizes = np.bincount(new, minlength=count)
        for c in np.flatnonzero(sizes == 0):
            movable = sizes[new] > 1
            cand = np.flatnonzero(movable)
            e = int(cand[np.argmax(dist[cand])])
            sizes[new[e]] -= 1
            new[e] = c
            sizes[c] = 1
            dist[e] = 0.0
            centers[c] = X[e]
        if np.array_equal(new, assign):
            break
        assign = new
        for c in range(count):
            centers[c] = X[assign == c].mean(axis=0)
    return ClusterMap(_relabel(assign), count, kind)


def subspace_jacobian(J, basis, n_tets):
    """(J @ basis) reshaped to (|T|, 3, 3, cols)."""
    return np.asarray(J @ basis).reshape(n_tets, 3, 3, -1)


def precompute_actuation_tensor(JB, JD, gammaV, clusters):
    """H[c, i, j, u, v] = sum_{e in c} gamma_e V_e JB[e, i, k, u] JD[e, j, k, v]."""
    r, m1 = JB.shape[-1], JD.shape[-1]
    out = np.zeros((clusters.count, 3, 3, r, m1))
    for c in range(clusters.count):
        idx = clusters.members(c)
        out[c] = np.einsum("e,eiku,ejkv->ijuv", gammaV[idx], JB[idx], JD[idx], optimize=True)
    return out


def precompute_passive_tensor(JB, muV, clusters):
    """Kv[k, i, j, c] = -sum_{e in c} mu_e V_e JB[e, i, j, k]."""
    r = JB.shape[-1]
    out = np.zeros((r, 3, 3, clusters.count))
    for c in range(clusters.count):
        idx = clusters.members(c)
        out[..., c] = -np.einsum("e,eijk->kij", muV[idx], JB[idx])
    return out


def precompute_force_tensor(JB, JD, gammaV, clusters):
    """O[w, k, d, l, c] = -sum_{e in c} gamma_e V_e JB[e, w, i, d] JD[e, k, i, l]."""
    r, m1 = JB.shape[-1], JD.shape[-1]
    out = np.zeros((3, 3, r, m1, clusters.count))
    for c in range(clusters.count):
        idx = clusters.members(c)
        out[..., c] = -np.einsum("e,ewid,ekil->wkdl", gammaV[idx], JB[idx], JD[idx], optimize=True)
    return out


def _weighted_gram(JB, weights):
    flat = JB.reshape(len(weights) * 9, -1)
    return flat.T @ (np.repeat(weights, 9)[:, None] * flat)


def factorize(Q):
    try:
        return sla.cho_factor(Q, lower=False)
    except sla.LinAlgError:
        lam = float(np.linalg.eigvalsh(0.5 * (Q + Q.T))[0])
        raise FactorizationError("reduced system matrix is not positive definite", lam) from None


def assemble_system(B, J, mass_vector, muV, gammaV, h, gravity=DEFAULT_GRAVITY):
    """Return (Q, N, ff, parts) where parts holds Qv, Qa and Qk."""
    n_tets = len(muV)
    JB = subspace_jacobian(J, B, n_tets)
    Qv = _weighted_gram(JB, muV)
    Qa = _weighted_gram(JB, gammaV)
    N = B.T @ (mass_vector[:, None] * B)
    Qk = N / h**2
    Q = Qv + Qa + Qk
    Q = 0.5 * (Q + Q.T)
    factorize(Q)
    n = len(mass_vector) // 3
    g = np.repeat(np.asarray(gravity, float), n)
    ff = B.T @ (mass_vector * g)
    return Q, N, ff, {"Qv": Qv, "Qa": Qa, "Qk": Qk}


@dataclass(eq=False)
class ReducedModel:
    """Everything needed to step without touching full-resolution data.

    ``B`` and ``Dbar`` are kept only for exporting full positions; stepping
    uses the small matrices below.
    """

    h: float
    Htensor: np.ndarray
    Kv: np.ndarray
    Otensor: np.ndarray
    Qv: np.ndarray
    Qa: np.ndarray
    N: np.ndarray
    gravity_map: np.ndarray        # (r, 3): B^T M (e_axis (x) 1)
    gravity: np.ndarray
    passive: ClusterMap
    active: ClusterMap
    z_rest: np.ndarray
    com_map: np.ndarray            # (3, r)
    frame_map: np.ndarray          # (3, 3, r) mass-weighted covariance against rest
    target_gram: np.ndarray        # (m+1, m+1): sum gamma V JD^T JD
    passive_const: float           # 1/2 sum mu V |R|^2
    contact_samples: np.ndarray
    contact_rows: np.ndarray       # (3, |I|, r) rows of B at the samples
    rest_heights: np.ndarray       # (|I|,) rest y of the samples
    B: np.ndarray = field(repr=False)
    Dbar: np.ndarray = field(repr=False)
    mode_eigenvalues: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.Q = 0.5 * ((self.Qv + self.Qa + self.N / self.h**2)
                        + (self.Qv + self.Qa + self.N / self.h**2).T)
        self.Q_factor = factorize(self.Q)
        self.Q_inv = sla.cho_solve(self.Q_factor, np.eye(self.r))
        self.ff = self.gravity_map @ self.gravity
        r = self.r
        # K as (r, |Cp| * 9) with columns ordered (c, i, j)
        self.Kv_matrix = np.ascontiguousarray(np.transpose(self.Kv, (0, 3, 1, 2)).reshape(r, -1))

    @property
    def r(self):
        return self.Qv.shape[0]

    @property
    def m(self):
        return self.Htensor.shape[-1] - 1

    @property
    def n_vertices(self):
        return self.B.shape[0] // 3

    @property
    def Qk(self):
        return self.N / self.h**2

    def solve(self, rhs):
        return sla.cho_solve(self.Q_factor, rhs)

    def com(self, z):
        return self.com_map @ z

    def positions(self, z):
        return self.B @ z

    # Serialization -----------------------------------------------------
    _ARRAYS = ("Htensor", "Kv", "Otensor", "Qv", "Qa", "N", "gravity_map", "gravity",
               "z_rest", "com_map", "frame_map", "target_gram", "contact_samples",
               "contact_rows", "rest_heights", "B", "Dbar", "mode_eigenvalues")

    def save(self, path):
        arrays = {name: getattr(self, name) for name in self._ARRAYS}
        arrays["passive_assignment"] = self.passive.assignment
        arrays["active_assignment"] = self.active.assignment
        meta = dict(self.meta)
        meta.update(h=self.h, passive_count=self.passive.count, active_count=self.active.count,
                    passive_const=self.passive_const, r=self.r, m=self.m,
                    n_vertices=self.n_vertices)
        write_container(path, MODEL_MAGIC, arrays, meta)

    @classmethod
    def load(cls, path):
        arrays, meta = read_container(path, MODEL_MAGIC)
        try:
            passive = ClusterMap(arrays.pop("passive_assignment"), meta["passive_count"], "passive")
            active = ClusterMap(arrays.pop("active_assignment"), meta["active_count"], "actuation")
            extra = {k: v for k, v in meta.items()
                     if k not in ("h", "passive_count", "active_count", "passive_const")}
            return cls(h=meta["h"], passive=passive, active=active,
                       passive_const=meta["passive_const"], meta=extra, **arrays)
        except (KeyError, TypeError) as exc:
            raise ArtifactError(f"{path}: incomplete model artifact ({exc})") from exc


def build_reduced_model(mesh, ops, basis, Dbar, passive, active, h,
                        gravity=DEFAULT_GRAVITY, contact_samples=(), mode_eigenvalues=None,
                        meta=None):
    """Run every precomputation for a mesh, subspaces and cluster maps."""
    B = basis.B
    n_tets = mesh.n_tets
    muV = mesh.mu * ops.volumes
    gammaV = mesh.gamma * ops.volumes
    JB = subspace_jacobian(ops.J, B, n_tets)
    JD = subspace_jacobian(ops.J, Dbar, n_tets)

    Htensor = precompute_actuation_tensor(JB, JD, gammaV, active)
    Kv = precompute_passive_tensor(JB, muV, passive)
    Otensor = precompute_force_tensor(JB, JD, gammaV, active)

    mvec = ops.mass_vector
    n = mesh.n_vertices
    Qv = _weighted_gram(JB, muV)
    Qa = _weighted_gram(JB, gammaV)
    N = B.T @ (mvec[:, None] * B)
    gravity_map = np.stack([B[a * n:(a + 1) * n].T @ ops.mass for a in range(3)], axis=1)

    total = ops.total_mass
    com_map = np.stack([ops.mass @ B[a * n:(a + 1) * n] for a in range(3)]) / total
    Xc = ops.X - ops.mass @ ops.X / total
    frame_map = np.stack([
        np.stack([(ops.mass * Xc[:, b]) @ B[a * n:(a + 1) * n] for b in range(3)])
        for a in range(3)])
    JD2 = JD.reshape(n_tets * 9, -1)
    target_gram = JD2.T @ (np.repeat(gammaV, 9)[:, None] * JD2)

    samples = np.asarray(contact_samples, dtype=np.int64)
    contact_rows = np.stack([B[a * n + samples] for a in range(3)]) if samples.size \
        else np.zeros((3, 0, B.shape[1]))
    return ReducedModel(
        h=float(h), Htensor=Htensor, Kv=Kv, Otensor=Otensor, Qv=Qv, Qa=Qa, N=N,
        gravity_map=gravity_map, gravity=np.asarray(gravity, float), passive=passive,
        active=active, z_rest=basis.rest_z(), com_map=com_map, frame_map=frame_map,
        target_gram=target_gram, passive_const=1.5 * float(muV.sum()),
        contact_samples=samples, contact_rows=contact_rows,
        rest_heights=mesh.vertices[samples, 1] if samples.size else np.zeros(0),
        B=B, Dbar=np.asarray(Dbar, float),
        mode_eigenvalues=np.zeros(0) if mode_eigenvalues is None else np.asarray(mode_eigenvalues),
        meta=dict(meta or {}))
