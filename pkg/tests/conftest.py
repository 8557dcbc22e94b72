import numpy as np
import pytest

from softgait.mesh import TetMesh, box_mesh, build_operators, flatten_positions
from softgait.modal import (build_lbs_jacobian, compute_actuation_modes, compute_skinning_weights,
                            elastic_hessian, scalar_laplacian)
from softgait.reduce import ClusterMap, build_reduced_model, cluster_elements, element_features

UNIT_TET_VERTICES = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])


def jittered_box(cells, size=(1.0, 1.0, 1.0), jitter=0.15, seed=0, random_materials=False,
                 origin=(0.0, 0.0, 0.0), density=1000.0):
    """Box mesh with interior and boundary vertices randomly displaced."""
    base = box_mesh(cells, size, origin)
    rng = np.random.default_rng(seed)
    h = np.asarray(size, float) / np.asarray(cells, float)
    V = base.vertices + jitter * h * rng.uniform(-1, 1, base.vertices.shape)
    m = base.n_tets
    mu = rng.uniform(0.5e4, 2e4, m) if random_materials else None
    gamma = rng.uniform(0.5e4, 2e4, m) if random_materials else None
    return TetMesh(V, base.tets, mu, gamma, density)


def two_tet_mesh(**materials):
    V = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 1.2]])
    T = np.array([[0, 1, 2, 3], [1, 2, 3, 4]])
    return TetMesh(V, T, **materials)


def build_model(mesh, w=3, m=2, passive=None, active=None, samples=(), h=0.01,
                gravity=(0.0, -9.8, 0.0), seed=0):
    """Reduced model with default k-means clusters (ints) or explicit maps."""
    ops = build_operators(mesh)
    sw = compute_skinning_weights(scalar_laplacian(mesh), ops.mass, w)
    basis = build_lbs_jacobian(sw.W, ops.X)
    x0 = flatten_positions(ops.X)
    modes = compute_actuation_modes(elastic_hessian(mesh, ops), ops.M, m, x0)
    feats = element_features(mesh.tets, sw.W, sw.eigenvalues,
                             mesh.vertices[mesh.tets].mean(axis=1))

    def clusters(spec, kind):
        if isinstance(spec, ClusterMap):
            return spec
        if spec == "element":
            return ClusterMap(np.arange(mesh.n_tets), mesh.n_tets, kind)
        return cluster_elements(feats, spec or 1, seed, kind)

    model = build_reduced_model(mesh, ops, basis, modes.Dbar, clusters(passive, "passive"),
                                clusters(active, "actuation"), h, gravity, samples,
                                modes.eigenvalues)
    return model, ops, basis, modes


@pytest.fixture
def unit_tet():
    return TetMesh(UNIT_TET_VERTICES, [[0, 1, 2, 3]], density=1.0)


@pytest.fixture
def two_tet():
    return two_tet_mesh()


@pytest.fixture(scope="session")
def small_mesh():
    return jittered_box((2, 2, 2), seed=3, random_materials=True)


@pytest.fixture(scope="session")
def small_model(small_mesh):
    return build_model(small_mesh, w=3, m=2, passive=3, active=2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# Acceptance-criterion reporting ----------------------------------------------

ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_RESULTS, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
