import numpy as np
import pytest

from softgait.cmaes import CMAES, CmaesConfig, cmaes_minimize


def sphere(x):
    return float(np.dot(x, x))


def rosenbrock(x):
    return float(np.sum(100 * (x[1:] - x[:-1] ** 2) ** 2 + (1 - x[:-1]) ** 2))


def shifted_sphere(x):
    return sphere(x) + 1000.0


class TestCmaes:
    def test_sphere(self):
        cfg = CmaesConfig(population=16, iterations=1000, sigma0=0.5, seed=1, max_evals=3000,
                          f_target=1e-12)
        res = cmaes_minimize(sphere, np.full(10, 1.0), config=cfg)
        assert np.linalg.norm(res.x_best) < 1e-6
        assert res.evaluations <= 3000

    def test_history_is_monotone(self):
        cfg = CmaesConfig(population=8, iterations=30, seed=2)
        res = cmaes_minimize(sphere, np.ones(4), config=cfg)
        assert res.history.shape == (30, 3)
        assert np.all(np.diff(res.history[:, 0]) <= 0)

    def test_deterministic(self):
        cfg = CmaesConfig(population=8, iterations=20, seed=5)
        a = cmaes_minimize(rosenbrock, np.zeros(3), config=cfg)
        b = cmaes_minimize(rosenbrock, np.zeros(3), config=cfg)
        np.testing.assert_array_equal(a.history, b.history)
        np.testing.assert_array_equal(a.x_best, b.x_best)

    def test_constant_offset_leaves_samples_unchanged(self):
        es_a = CMAES(np.ones(5), 0.3, 8, seed=4)
        es_b = CMAES(np.ones(5), 0.3, 8, seed=4)
        for _ in range(10):
            Xa, Xb = es_a.ask(), es_b.ask()
            np.testing.assert_array_equal(Xa, Xb)
            es_a.tell(Xa, [sphere(x) for x in Xa])
            es_b.tell(Xb, [shifted_sphere(x) for x in Xb])

    def test_flat_objective(self):
        cfg = CmaesConfig(population=6, iterations=15, seed=0)
        x0 = np.array([0.2, -0.1])
        res = cmaes_minimize(lambda x: 3.0, x0, config=cfg)
        np.testing.assert_array_equal(res.x_best, x0)
        assert res.f_best == 3.0
        assert np.all(np.isfinite(res.history))

    def test_non_finite_values_are_penalized(self):
        cfg = CmaesConfig(population=6, iterations=5, seed=0, penalty=1e6)
        res = cmaes_minimize(lambda x: np.nan if x[0] > 0 else sphere(x), np.zeros(2), config=cfg)
        assert np.isfinite(res.f_best) and res.f_best <= 1e6

    def test_zero_dimension(self):
        with pytest.raises(ValueError):
            CMAES(np.zeros(0), 0.3)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            CmaesConfig(population=3)
        with pytest.raises(ValueError):
            CmaesConfig(iterations=0)
        with pytest.raises(ValueError):
            CmaesConfig(sigma0=0.0)

    def test_restart_on_degeneracy(self):
        es = CMAES(np.ones(3), 0.3, 6, seed=0)
        es.C = np.diag([1.0, 1.0, 0.0])
        assert es.degenerate()
        es.restart(np.zeros(3))
        assert es.restarts == 1
        assert es.sigma == pytest.approx(0.03)
        np.testing.assert_array_equal(es.C, np.eye(3))

    def test_parallel_matches_serial(self):
        serial = CmaesConfig(population=8, iterations=6, seed=3)
        parallel = CmaesConfig(population=8, iterations=6, seed=3, parallel_rollouts=True, jobs=2)
        a = cmaes_minimize(rosenbrock, np.zeros(4), config=serial)
        b = cmaes_minimize(rosenbrock, np.zeros(4), config=parallel)
        np.testing.assert_array_equal(a.history, b.history)


class TestCheckpoint:
    def test_resume_reproduces_uninterrupted_run(self, tmp_path):
        path = tmp_path / "ck.sgc"
        full = cmaes_minimize(rosenbrock, np.zeros(3),
                              config=CmaesConfig(population=8, iterations=20, seed=9))
        cmaes_minimize(rosenbrock, np.zeros(3),
                       config=CmaesConfig(population=8, iterations=10, seed=9),
                       checkpoint=path, checkpoint_every=5)
        resumed = cmaes_minimize(rosenbrock, np.zeros(3),
                                 config=CmaesConfig(population=8, iterations=20, seed=9),
                                 checkpoint=path, resume=True)
        np.testing.assert_array_equal(resumed.history, full.history)
        np.testing.assert_array_equal(resumed.x_best, full.x_best)
        assert resumed.evaluations == full.evaluations

    def test_mismatched_checkpoint(self, tmp_path):
        path = tmp_path / "ck.sgc"
        cmaes_minimize(sphere, np.zeros(2), config=CmaesConfig(population=8, iterations=2),
                       checkpoint=path)
        with pytest.raises(ValueError):
            cmaes_minimize(sphere, np.zeros(2), config=CmaesConfig(population=10, iterations=4),
                           checkpoint=path, resume=True)
