"""Unreduced energies and a full-space local-global step.

These operate directly on vertex positions with per-element (or optionally
clustered) rotations. They exist to check the reduced machinery and are only
meant for meshes with a few hundred vertices.
"""

import numpy as np
import scipy.linalg as sla

from .mesh import build_operators
from .sim import polar_rotations, solve_contact_system

MAX_REFERENCE_VERTICES = 500


def _cluster_rotations(F, Y, weights, assignment=None):
    """Best-fit rotations of weighted sum(F Y^T), per element or per cluster."""
    C = weights[:, None, None] * (F if Y is None else F @ np.transpose(Y, (0, 2, 1)))
    if assignment is None:
        R, _ = polar_rotations(C)
        return R
    count = int(assignment.max()) + 1
    H = np.zeros((count, 3, 3))
    np.add.at(H, assignment, C)
    R, _ = polar_rotations(H)
    return R[assignment]


def elastic_energy(x, mesh, ops=None, assignment=None):
    """1/2 sum_e mu_e V_e |F_e - R_c(e)|^2 with optimal rotations."""
    ops = ops or build_operators(mesh)
    F = ops.deformation_gradients(x)
    w = mesh.mu * ops.volumes
    R = _cluster_rotations(F, None, w, assignment)
    return 0.5 * float(np.sum(w * np.sum((F - R) ** 2, axis=(1, 2))))


def actuation_energy(x, d, mesh, ops=None, assignment=None):
    """1/2 sum_e gamma_e V_e |F_e(x) - Omega_c(e) Y_e(d)|^2 with optimal Omega."""
    ops = ops or build_operators(mesh)
    F = ops.deformation_gradients(x)
    Y = ops.deformation_gradients(d)
    w = mesh.gamma * ops.volumes
    Om = _cluster_rotations(F, Y, w, assignment)
    return 0.5 * float(np.sum(w * np.sum((F - Om @ Y) ** 2, axis=(1, 2))))


def finite_difference_gradient(fun, x, eps=1e-6):
    """Central differences of a scalar function."""
    x = np.asarray(x, float)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = eps
        g[i] = (fun(x + e) - fun(x - e)) / (2 * eps)
    return g


class FullSpaceStepper:
    """Per-element local-global solve on all 3n vertex coordinates."""

    def __init__(self, mesh, config, ops=None):
        if mesh.n_vertices > MAX_REFERENCE_VERTICES:
            raise ValueError(f"reference stepper limited to {MAX_REFERENCE_VERTICES} vertices")
        self.mesh = mesh
        self.config = config
        self.ops = ops or build_operators(mesh)
        n = mesh.n_vertices
        self.muV = mesh.mu * self.ops.volumes
        self.gammaV = mesh.gamma * self.ops.volumes
        J = self.ops.J
        wsum = np.repeat(self.muV + self.gammaV, 9)
        A = (J.T @ J.multiply(wsum[:, None])).toarray()
        self.mass = self.ops.mass_vector
        A += np.diag(self.mass) / config.h**2
        self.A = 0.5 * (A + A.T)
        self.factor = sla.cho_factor(self.A)
        self.A_inv = sla.cho_solve(self.factor, np.eye(3 * n))
        self.fg = self.mass * np.repeat(np.asarray(config.gravity, float), n)
        samples = np.asarray(config.contact_samples if config.contact_samples is not None
                             else (), dtype=np.int64)
        self.samples = samples if config.contact else samples[:0]

    def _rhs(self, x, y, Y):
        J = self.ops.J
        F = self.ops.deformation_gradients(x)
        R = _cluster_rotations(F, None, self.muV)
        Om = _cluster_rotations(F, Y, self.gammaV)
        target = self.muV[:, None, None] * R + self.gammaV[:, None, None] * (Om @ Y)
        return self.mass * y / self.config.h**2 + self.fg + J.T @ target.reshape(-1)

    def step(self, x, x_prev, d):
        cfg = self.config
        n = self.mesh.n_vertices
        Y = self.ops.deformation_gradients(d)
        y = 2.0 * x - x_prev
        xi = y.copy()
        engaged = np.zeros(self.samples.size, dtype=bool)
        for _ in range(cfg.lg_iters):
            rhs = self._rhs(xi, y, Y)
            fc = np.zeros_like(rhs)
            if self.samples.size:
                engaged |= xi[n + self.samples] < cfg.ground_height
                act = self.samples[engaged]
                if act.size:
                    rows = np.concatenate([n + act, act, 2 * n + act])
                    L = self.A_inv[rows]
                    vel_prev = (x - x_prev)[rows[act.size:]] / cfg.h
                    v = np.concatenate([np.zeros(act.size), cfg.friction_damping * vel_prev])
                    b = cfg.h * v + x[rows] - L @ rhs
                    Jc = None
                    if cfg.contact_metric == "system":
                        Jc = np.zeros((rows.size, 3 * n))
                        Jc[np.arange(rows.size), rows] = 1.0
                    fc, _ = solve_contact_system(L, b, Jc)
            xi = sla.cho_solve(self.factor, rhs + fc)
        return xi


def full_space_reference_step(x, x_prev, mesh, a_bar, Dbar, config):
    d = np.asarray(Dbar, float) @ np.asarray(a_bar, float)
    return FullSpaceStepper(mesh, config).step(x, x_prev, d)
