"""(mu/mu_w, lambda)-CMA-ES with cumulative step-size adaptation.

Population sampling draws from a generator seeded by
``(seed, restart, generation)``, so a run can be checkpointed and resumed
without storing RNG state, and evaluating candidates in parallel cannot
change the result.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
import logging
import math

import numpy as np

from .containers import read_container, write_container

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = "SGCMA"


@dataclass(frozen=True)
class CmaesConfig:
    population: int = 16
    iterations: int = 200
    sigma0: float = 0.3
    seed: int = 0
    parallel_rollouts: bool = False
    jobs: int = None
    max_evals: int = None
    f_target: float = None
    penalty: float = 1e6

    def __post_init__(self):
        if self.population < 4:
            raise ValueError("population must be at least 4")
        if self.iterations < 1:
            raise ValueError("need at least one iteration")
        if not self.sigma0 > 0:
            raise ValueError("sigma0 must be positive")


@dataclass
class OptResult:
    x_best: np.ndarray
    f_best: float
    history: np.ndarray = field(repr=False)   # rows: best-ever f, median f, sigma
    evaluations: int = 0
    restarts: int = 0
    params: object = None

    @property
    def iterations(self):
        return len(self.history)


class CMAES:
    def __init__(self, x0, sigma0, population=None, seed=0):
        x0 = np.asarray(x0, float).ravel()
        N = x0.size
        if N == 0:
            raise ValueError("CMA-ES needs at least one dimension")
        self.N = N
        self.seed = int(seed)
        self.sigma0 = float(sigma0)
        lam = population or 4 + int(3 * math.log(N))
        self.lam = lam
        mu = lam // 2
        w = math.log(mu + 0.5) - np.log(np.arange(1, mu + 1))
        self.weights = w / w.sum()
        self.mu = mu
        self.mueff = 1.0 / np.sum(self.weights**2)
        me = self.mueff
        self.cs = (me + 2) / (N + me + 5)
        self.ds = 1 + 2 * max(0.0, math.sqrt((me - 1) / (N + 1)) - 1) + self.cs
        self.cc = (4 + me / N) / (N + 4 + 2 * me / N)
        self.c1 = 2 / ((N + 1.3) ** 2 + me)
        self.cmu = min(1 - self.c1, 2 * (me - 2 + 1 / me) / ((N + 2) ** 2 + me))
        self.chiN = math.sqrt(N) * (1 - 1 / (4 * N) + 1 / (21 * N**2))

        self.generation = 0
        self.restarts = 0
        self._reset(x0, self.sigma0)

    def _reset(self, mean, sigma):
        self.mean = np.array(mean, float)
        self.sigma = float(sigma)
        self.C = np.eye(self.N)
        self.ps = np.zeros(self.N)
        self.pc = np.zeros(self.N)
        self.gen_since_restart = 0

    def _eigen(self):
        evals, Bm = np.linalg.eigh(self.C)
        return Bm, np.sqrt(np.maximum(evals, 0.0))

    def ask(self):
        rng = np.random.default_rng([self.seed, self.restarts, self.generation])
        Bm, D = self._eigen()
        Z = rng.standard_normal((self.lam, self.N))
        Y = (Z * D) @ Bm.T
        return self.mean + self.sigma * Y

    def tell(self, X, fvals):
        X = np.asarray(X, float)
        order = np.argsort(np.asarray(fvals, float), kind="stable")
        Y = (X[order[:self.mu]] - self.mean) / self.sigma
        yw = self.weights @ Y
        self.mean = self.mean + self.sigma * yw

        Bm, D = self._eigen()
        invsqrt = (Bm / np.maximum(D, 1e-300)) @ Bm.T
        self.ps = (1 - self.cs) * self.ps + math.sqrt(self.cs * (2 - self.cs) * self.mueff) * (invsqrt @ yw)
        g = self.gen_since_restart + 1
        norm_ps = np.linalg.norm(self.ps)
        hsig = norm_ps / math.sqrt(1 - (1 - self.cs) ** (2 * g)) < (1.4 + 2 / (self.N + 1)) * self.chiN
        self.pc = (1 - self.cc) * self.pc + hsig * math.sqrt(self.cc * (2 - self.cc) * self.mueff) * yw
        delta = (1 - hsig) * self.cc * (2 - self.cc)
        rank_mu = (Y.T * self.weights) @ Y
        self.C = ((1 - self.c1 - self.cmu + self.c1 * delta) * self.C
                  + self.c1 * np.outer(self.pc, self.pc) + self.cmu * rank_mu)
        self.C = 0.5 * (self.C + self.C.T)
        self.sigma *= math.exp((self.cs / self.ds) * (norm_ps / self.chiN - 1))
        self.generation += 1
        self.gen_since_restart += 1

    def degenerate(self):
        if not (np.all(np.isfinite(self.C)) and np.isfinite(self.sigma) and self.sigma > 0):
            return True
        evals = np.linalg.eigvalsh(self.C)
        return evals[0] <= 0 or evals[-1] / evals[0] > 1e14 or self.sigma * math.sqrt(evals[-1]) < 1e-300

    def restart(self, x_best):
        self.restarts += 1
        self._reset(x_best, self.sigma0 / 10.0)

    # Checkpointing -------------------------------------------------------
    def state_arrays(self):
        return {"mean": self.mean, "C": self.C, "ps": self.ps, "pc": self.pc,
                "scalars": np.array([self.sigma, self.generation, self.restarts,
                                     self.gen_since_restart, self.seed, self.sigma0, self.lam])}

    def load_state(self, arrays):
        self.mean = arrays["mean"].copy()
        self.C = arrays["C"].copy()
        self.ps = arrays["ps"].copy()
        self.pc = arrays["pc"].copy()
        sigma, gen, restarts, gsr, seed, sigma0, lam = arrays["scalars"]
        if int(lam) != self.lam or int(seed) != self.seed:
            raise ValueError("checkpoint was written with a different population or seed")
        self.sigma, self.sigma0 = float(sigma), float(sigma0)
        self.generation, self.restarts, self.gen_since_restart = int(gen), int(restarts), int(gsr)


_WORKER_FN = None


def _init_worker(fn):
    global _WORKER_FN
    _WORKER_FN = fn


def _call_worker(x):
    return _WORKER_FN(x)


class _Evaluator:
    def __init__(self, f, jobs, penalty):
        self.f = f
        self.penalty = penalty
        self.pool = None
        if jobs and jobs > 1:
            self.pool = ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker,
                                            initargs=(f,))

    def _clean(self, v):
        v = float(v)
        return v if math.isfinite(v) else self.penalty

    def __call__(self, X):
        if self.pool is None:
            return np.array([self._clean(self.f(x)) for x in X])
        return np.array([self._clean(v) for v in self.pool.map(_call_worker, list(X))])

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()


def save_checkpoint(path, es, x_best, f_best, history, evaluations):
    arrays = es.state_arrays()
    arrays.update(x_best=x_best, f_best=np.array([f_best]),
                  history=np.asarray(history, float).reshape(-1, 3),
                  evaluations=np.array([evaluations]))
    write_container(path, CHECKPOINT_MAGIC, arrays, {"generation": es.generation})


def cmaes_minimize(f, x0, sigma0=None, config=CmaesConfig(), checkpoint=None,
                   checkpoint_every=10, resume=False):
    """Minimize ``f`` and return the best-ever point.

    ``f`` must be picklable when ``config.parallel_rollouts`` is set with
    more than one job. Non-finite objective values are replaced by
    ``config.penalty``. With ``checkpoint`` set, state is written every
    ``checkpoint_every`` generations and at the end; ``resume`` continues
    from that file.
    """
    sigma0 = config.sigma0 if sigma0 is None else sigma0
    es = CMAES(x0, sigma0, config.population, config.seed)
    jobs = config.jobs if config.parallel_rollouts else None
    evaluate = _Evaluator(f, jobs, config.penalty)
    try:
        if resume and checkpoint is not None:
            arrays, _ = read_container(checkpoint, CHECKPOINT_MAGIC)
            es.load_state(arrays)
            x_best, f_best = arrays["x_best"], float(arrays["f_best"][0])
            history = [tuple(row) for row in arrays["history"]]
            evals = int(arrays["evaluations"][0])
        else:
            x_best = es.mean.copy()
            f_best = float(evaluate(x_best[None])[0])
            history, evals = [], 1

        while es.generation < config.iterations:
            if config.max_evals is not None and evals + es.lam > config.max_evals:
                break
            if config.f_target is not None and f_best <= config.f_target:
                break
            X = es.ask()
            fv = evaluate(X)
            evals += len(fv)
            i = int(np.argmin(fv))
            if fv[i] < f_best:
                f_best, x_best = float(fv[i]), X[i].copy()
            es.tell(X, fv)
            if es.degenerate():
                log.warning("covariance degenerated at generation %d; restarting", es.generation)
                es.restart(x_best)
            history.append((f_best, float(np.median(fv)), es.sigma))
            if checkpoint is not None and es.generation % checkpoint_every == 0:
                save_checkpoint(checkpoint, es, x_best, f_best, history, evals)
        if checkpoint is not None:
            save_checkpoint(checkpoint, es, x_best, f_best, history, evals)
    finally:
        evaluate.close()
    return OptResult(x_best=x_best, f_best=f_best, history=np.array(history).reshape(-1, 3),
                     evaluations=evals, restarts=es.restarts)
