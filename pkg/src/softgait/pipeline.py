"""Mesh-to-model precomputation driven by a RunConfig."""

from dataclasses import dataclass, field
import time

import numpy as np

from .actuation import normalize_display_scale
from .mesh import box_mesh, build_operators, flatten_positions, load_mesh, sample_surface_vertices
from .modal import (build_lbs_jacobian, compute_actuation_modes, compute_skinning_weights,
                    elastic_hessian, scalar_laplacian)
from .reduce import build_reduced_model, cluster_elements, element_features


@dataclass
class Precomputed:
    """A built model together with the intermediate full-space pieces."""

    mesh: object
    ops: object
    weights: object
    basis: object
    modes: object
    Dbar: np.ndarray
    model: object
    timings: dict = field(default_factory=dict)


def load_config_mesh(config):
    mat = config.materials
    if config.mesh.path is not None:
        mesh = load_mesh(config.mesh_path())
        return mesh.with_materials(mu=mat.mu, gamma=mat.gamma, density=mat.density)
    return box_mesh(config.mesh.box_cells, config.mesh.box_size,
                    mu=mat.mu, gamma=mat.gamma, density=mat.density)


def actuation_modes(mesh, ops, m, display_fraction=0.1):
    """Display-normalized actuation modes and ``Dbar = [D x0]``."""
    x0 = flatten_positions(ops.X)
    modes = compute_actuation_modes(elastic_hessian(mesh, ops), ops.M, m, x0)
    D = normalize_display_scale(modes.D, mesh.bbox_diagonal(), display_fraction)
    return modes, np.hstack([D, x0[:, None]])


def precompute(config, mesh=None):
    """Run every precomputation step for ``config``.

    ``mesh`` overrides the mesh described in the config.
    """
    timings = {}
    clock = time.perf_counter()

    def lap(name):
        nonlocal clock
        now = time.perf_counter()
        timings[name] = now - clock
        clock = now

    mesh = mesh if mesh is not None else load_config_mesh(config)
    ops = build_operators(mesh)
    lap("operators")
    sw = compute_skinning_weights(scalar_laplacian(mesh), ops.mass, config.subspace.w)
    basis = build_lbs_jacobian(sw.W, ops.X)
    lap("skinning")
    modes, Dbar = actuation_modes(mesh, ops, config.subspace.m, config.display_fraction)
    lap("modes")
    centroids = mesh.vertices[mesh.tets].mean(axis=1)
    feats = element_features(mesh.tets, sw.W, sw.eigenvalues, centroids)
    passive = cluster_elements(feats, min(config.clusters.passive, mesh.n_tets), config.seed,
                               "passive")
    active = cluster_elements(feats, min(config.clusters.active, mesh.n_tets), config.seed,
                              "actuation")
    samples = sample_surface_vertices(mesh, config.contact_samples)
    lap("clusters")
    sim_cfg = config.sim_config()
    meta = {"w": config.subspace.w, "n_tets": mesh.n_tets, "seed": config.seed,
            "display_fraction": config.display_fraction, "n_rigid": modes.n_rigid}
    model = build_reduced_model(mesh, ops, basis, Dbar, passive, active, sim_cfg.h,
                                sim_cfg.gravity, samples, modes.eigenvalues, meta)
    lap("tensors")
    return Precomputed(mesh, ops, sw, basis, modes, Dbar, model, timings)
