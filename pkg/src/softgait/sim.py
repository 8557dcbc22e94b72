"""Reduced local-global time stepping with clustered rotations and
projective ground contact."""

from dataclasses import dataclass, field
import hashlib
import json
import warnings

import numpy as np
import scipy.linalg as sla

from .containers import write_container

DEGENERATE_TOL = 1e-12
CONTACT_METRICS = ("system", "euclidean")


def polar_rotation(A, tol=DEGENERATE_TOL):
    """Rotation factor of A, i.e. the R in SO(3) maximizing tr(R A^T).

    Returns ``(R, degenerate)``; ``degenerate`` is True when A has rank at
    most one, where the maximizer is not unique.
    """
    R, bad = polar_rotations(np.asarray(A, float)[None], tol=tol)
    return R[0], bool(bad[0])


def polar_rotations(A, previous=None, tol=DEGENERATE_TOL):
    """Batched polar rotation of (k, 3, 3) matrices.

    Where a matrix is degenerate and ``previous`` is given, the previous
    rotation is kept instead.
    """
    U, s, Vt = np.linalg.svd(A)
    det = np.linalg.det(U @ Vt)
    U = U.copy()
    U[:, :, 2] *= np.where(det < 0, -1.0, 1.0)[:, None]
    R = U @ Vt
    bad = s[:, 1] <= tol * np.maximum(s[:, 0], 1e-300)
    if previous is not None and bad.any():
        R[bad] = previous[bad]
    return R, bad


@dataclass(frozen=True)
class SimConfig:
    h: float = 0.01
    lg_iters: int = 10
    gravity: tuple = (0.0, -9.8, 0.0)
    friction_damping: float = 0.5
    contact_samples: tuple = None     # None: use the model's samples
    ground_height: float = 0.0
    contact: bool = True
    contact_metric: str = "system"    # or "euclidean"

    def __post_init__(self):
        if self.contact_metric not in CONTACT_METRICS:
            raise ValueError(f"contact_metric must be one of {CONTACT_METRICS}")
        if not self.h > 0:
            raise ValueError("timestep must be positive")
        if self.lg_iters < 1:
            raise ValueError("need at least one local-global iteration")
        if not 0.0 <= self.friction_damping <= 1.0:
            raise ValueError("friction damping must lie in [0, 1]")

    def digest(self):
        payload = json.dumps({k: (list(v) if isinstance(v, (tuple, np.ndarray)) else v)
                              for k, v in self.__dict__.items()}, sort_keys=True, default=float)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


@dataclass
class SimState:
    z: np.ndarray
    z_prev: np.ndarray
    t: float = 0.0
    step_index: int = 0


@dataclass
class ContactSolve:
    active: np.ndarray
    Jn: np.ndarray
    Jt: np.ndarray
    fc: np.ndarray
    regularized: bool = False


@dataclass
class StepInfo:
    energies: list = field(default_factory=list)
    contact: ContactSolve = None
    normal_residual: float = 0.0
    degenerate_rotations: int = 0


class ReducedSimulator:
    """Caches the per-configuration quantities for a ReducedModel."""

    def __init__(self, model, config=None):
        config = config or SimConfig(h=model.h)
        if abs(config.h - model.h) > 1e-12 * model.h:
            raise ValueError(f"config timestep {config.h} differs from model timestep {model.h}")
        self.model = model
        self.config = config
        if config.contact_samples is None:
            rows = model.contact_rows
        else:
            idx = np.asarray(config.contact_samples, dtype=np.int64)
            n = model.n_vertices
            rows = np.stack([model.B[a * n + idx] for a in range(3)])
        self.contact_rows = rows if config.contact else rows[:, :0]
        self.contact_L = self.contact_rows @ model.Q_inv
        self.ff = model.gravity_map @ np.asarray(config.gravity, float)
        self._inertia = model.N / model.h**2

    # Actuation-dependent contractions, computed once per step ---------------
    def actuation_context(self, a_bar):
        m = self.model
        Ha = np.tensordot(m.Htensor, a_bar, axes=([4], [0]))            # (Ca, 3, 3, r)
        Ha = Ha.reshape(-1, m.r)
        Oa = np.tensordot(m.Otensor, a_bar, axes=([3], [0]))            # (3, 3, r, Ca)
        Oa = np.ascontiguousarray(np.transpose(Oa, (2, 3, 0, 1)).reshape(m.r, -1))
        const = 0.5 * float(a_bar @ m.target_gram @ a_bar)
        return Ha, Oa, const

    def local_step(self, z, ctx, previous=None):
        """Optimal passive rotations R_c and actuation rotations Omega_c."""
        Ha, _, _ = ctx
        Hp = (-(self.model.Kv_matrix.T @ z)).reshape(-1, 3, 3)
        Hc = (Ha @ z).reshape(-1, 3, 3)
        prev_p, prev_a = previous if previous is not None else (None, None)
        R, bad_p = polar_rotations(Hp, prev_p)
        Om, bad_a = polar_rotations(Hc, prev_a)
        return R, Om, int(bad_p.sum() + bad_a.sum())

    def rotation_forces(self, R, Omega, ctx):
        """Linear energy coefficients f_v and f_a at fixed rotations."""
        fv = self.model.Kv_matrix @ R.reshape(-1)
        fa = ctx[1] @ Omega.reshape(-1)
        return fv, fa

    def right_hand_side(self, R, Omega, ctx, q):
        fv, fa = self.rotation_forces(R, Omega, ctx)
        return self._inertia @ q + self.ff - fv - fa

    def energy(self, z, q, ctx, rotations=None):
        """Total reduced energy, with rotations re-optimized unless given."""
        m = self.model
        if rotations is None:
            R, Om, _ = self.local_step(z, ctx)
        else:
            R, Om = rotations
        fv, fa = self.rotation_forces(R, Om, ctx)
        d = z - q
        kinetic = 0.5 * d @ self._inertia @ d
        elastic = 0.5 * z @ m.Qv @ z + z @ fv + m.passive_const
        active = 0.5 * z @ m.Qa @ z + z @ fa + ctx[2]
        return kinetic - z @ self.ff + elastic + active

    def contact_forces(self, z_pred, z_curr, z_prev, rhs, engaged=None):
        """Projective contact force for the samples predicted below ground.

        ``engaged`` (boolean, per sample) lists samples already constrained
        earlier in the same step; they stay constrained so the final iterate
        cannot drop a contact that only just resolved to the ground height.
        """
        cfg = self.config
        rows = self.contact_rows
        r = self.model.r
        below = rows[1] @ z_pred < cfg.ground_height
        if engaged is not None:
            below |= engaged
            engaged[:] = below
        active = np.flatnonzero(below)
        if active.size == 0:
            return ContactSolve(active, np.zeros((0, r)), np.zeros((0, r)), np.zeros(r))
        Jn = rows[1, active]
        Jt = np.vstack([rows[0, active], rows[2, active]])
        Jc = np.vstack([Jn, Jt])
        L = np.vstack([self.contact_L[1, active], self.contact_L[0, active],
                       self.contact_L[2, active]])
        zdot_prev = (z_curr - z_prev) / cfg.h
        v = np.concatenate([np.zeros(active.size), cfg.friction_damping * (Jt @ zdot_prev)])
        b = cfg.h * v + Jc @ z_curr - L @ rhs
        fc, regularized = solve_contact_system(
            L, b, Jc if cfg.contact_metric == "system" else None)
        return ContactSolve(active, Jn, Jt, fc, regularized)

    def global_step(self, rhs, fc=None):
        return self.model.solve(rhs if fc is None else rhs + fc)

    def step(self, state, a, diagnostics=False):
        cfg = self.config
        a_bar = np.append(np.asarray(a, float), 1.0)
        ctx = self.actuation_context(a_bar)
        z, z_prev = state.z, state.z_prev
        q = 2.0 * z - z_prev
        it = q.copy()
        info = StepInfo() if diagnostics else None
        previous = (np.broadcast_to(np.eye(3), (self.model.passive.count, 3, 3)),
                    np.broadcast_to(np.eye(3), (self.model.active.count, 3, 3)))
        cs = None
        engaged = np.zeros(self.contact_rows.shape[1], dtype=bool)
        for _ in range(cfg.lg_iters):
            R, Om, bad = self.local_step(it, ctx, previous)
            previous = (R, Om)
            if diagnostics:
                info.degenerate_rotations += bad
                info.energies.append(self.energy(it, q, ctx, (R, Om)))
            rhs = self.right_hand_side(R, Om, ctx, q)
            cs = self.contact_forces(it, z, z_prev, rhs, engaged)
            it = self.global_step(rhs, cs.fc)
        if diagnostics:
            info.energies.append(self.energy(it, q, ctx))
            info.contact = cs
            if cs.active.size:
                free = self.global_step(rhs)
                vel = cs.Jn @ (it - z) / cfg.h
                vel_free = cs.Jn @ (free - z) / cfg.h
                info.normal_residual = float(np.linalg.norm(vel) /
                                             max(np.linalg.norm(vel_free), 1e-300))
        new = SimState(it, z.copy(), state.t + cfg.h, state.step_index + 1)
        return (new, info) if diagnostics else new

    def rest_state(self, lift=0.0):
        z = self.model.z_rest.copy()
        if lift:
            z = z + lift * self.translation_direction(1)
        return SimState(z, z.copy())

    def translation_direction(self, axis):
        """Reduced coordinates of a unit rigid translation along ``axis``."""
        m = self.model
        n = m.n_vertices
        x = np.zeros(3 * n)
        x[axis * n:(axis + 1) * n] = 1.0
        return np.linalg.lstsq(m.B, x, rcond=None)[0]

    def simulate(self, actuation_fn, steps, state=None):
        state = state or self.rest_state()
        m = self.model
        zs = np.empty((steps + 1, m.r))
        zs[0] = state.z
        for s in range(steps):
            state = self.step(state, actuation_fn(state.t + self.config.h))
            zs[s + 1] = state.z
        return Trajectory.from_reduced(zs, m, self.config)


def solve_contact_system(L, b, Jc=None):
    """Contact force ``fc`` with ``L fc = b``.

    Over-determined systems (``3k >= r``) are solved in the least-squares
    sense. Under-determined systems take the smallest force; with ``Jc``
    given, "smallest" is measured in the ``Q^-1`` metric (``L = Jc Q^-1``),
    which makes ``fc = Jc^T lambda`` a force applied at the contact points.
    Without ``Jc`` the plain Euclidean norm of ``fc`` is minimized.

    Falls back to an SVD pseudo-inverse when the normal equations are
    numerically singular; the second return value flags that case.
    """
    k, r = L.shape
    with warnings.catch_warnings():
        warnings.simplefilter("error", sla.LinAlgWarning)
        try:
            if k >= r:
                return sla.solve(L.T @ L, L.T @ b, assume_a="pos"), False
            if Jc is not None:
                return Jc.T @ sla.solve(L @ Jc.T, b, assume_a="pos"), False
            return L.T @ sla.solve(L @ L.T, b, assume_a="pos"), False
        except (sla.LinAlgError, sla.LinAlgWarning, ValueError):
            pass
    if k < r and Jc is not None:
        return Jc.T @ np.linalg.lstsq(L @ Jc.T, b, rcond=1e-12)[0], True
    return np.linalg.lstsq(L, b, rcond=1e-12)[0], True


@dataclass
class Trajectory:
    z: np.ndarray            # (steps + 1, r)
    com: np.ndarray          # (steps + 1, 3)
    frames: np.ndarray       # (steps + 1, 3, 3) best-fit global rotation
    h: float
    config_hash: str = ""

    @classmethod
    def from_reduced(cls, zs, model, config=None):
        com = zs @ model.com_map.T
        cov = np.einsum("abr,tr->tab", model.frame_map, zs)
        frames = np.empty_like(cov)
        prev = np.eye(3)
        for t in range(len(zs)):
            R, bad = polar_rotation(cov[t])
            frames[t] = prev if bad else R
            prev = frames[t]
        return cls(zs, com, frames, model.h, config.digest() if config else "")

    @property
    def steps(self):
        return len(self.z) - 1

    def save(self, path, model):
        """Frames container: one row of 3n axis-major positions per step."""
        x = self.z @ model.B.T
        write_container(path, "SGTRAJ", {"positions": x, "com": self.com},
                        {"n": model.n_vertices, "steps": self.steps, "h": self.h,
                         "config_hash": self.config_hash})


# Functional wrappers ---------------------------------------------------------

def local_step(z, a_bar, model):
    sim = ReducedSimulator(model)
    R, Om, _ = sim.local_step(z, sim.actuation_context(np.asarray(a_bar, float)))
    return R, Om


def global_step(rotations, a_bar, q, model, fc=None, gravity=None):
    cfg = SimConfig(h=model.h, gravity=tuple(model.gravity if gravity is None else gravity))
    sim = ReducedSimulator(model, cfg)
    ctx = sim.actuation_context(np.asarray(a_bar, float))
    return sim.global_step(sim.right_hand_side(*rotations, ctx, q), fc)


def step(state, a, model, config):
    return ReducedSimulator(model, config).step(state, a)


def simulate(model, config, actuation_fn, steps, state=None):
    return ReducedSimulator(model, config).simulate(actuation_fn, steps, state)
