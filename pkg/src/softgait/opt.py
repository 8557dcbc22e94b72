"""Locomotion and jumping objectives, and CMA-ES over actuation parameters."""

from dataclasses import dataclass, field
import logging

import numpy as np

from .actuation import ActuationParams, ParamBounds, full_actuation, pack, select_modes, unpack
from .cmaes import CmaesConfig, OptResult, cmaes_minimize
from .sim import ReducedSimulator

log = logging.getLogger(__name__)

PENALTY = 1e6


def _unit(v):
    v = np.asarray(v, float)
    norm = np.linalg.norm(v)
    if not np.isclose(norm, 1.0, rtol=0, atol=1e-9):
        raise ValueError(f"expected a unit vector, got norm {norm}")
    return v


@dataclass(frozen=True)
class ObjectiveConfig:
    kind: str = "locomotion"
    direction: tuple = (1.0, 0.0, 0.0)
    forward: tuple = (1.0, 0.0, 0.0)

    def __post_init__(self):
        if self.kind not in ("locomotion", "jump"):
            raise ValueError(f"unknown objective {self.kind!r}")
        _unit(self.direction)
        _unit(self.forward)


def objective_locomotion(traj, config=ObjectiveConfig()):
    """J_disp * J_align, negative when the body moves along the target.

    The body's forward axis at time t is the rest-frame forward axis rotated
    by the best-fit global rotation of the deformed shape (stored in
    ``traj.frames``).
    """
    v = _unit(config.direction)
    u0 = _unit(config.forward)
    j_disp = -float((traj.com[-1] - traj.com[0]) @ v)
    j_align = float(np.min(traj.frames @ u0 @ v))
    return j_disp * j_align


def objective_jump(traj):
    """Negated mean center-of-mass height over all recorded frames."""
    return -float(np.mean(traj.com[:, 1]))


def evaluate_objective(traj, config):
    if config.kind == "jump":
        return objective_jump(traj)
    return objective_locomotion(traj, config)


@dataclass
class RolloutObjective:
    """Picklable map from a decision vector to an objective value."""

    model: object
    sim_config: object
    objective: ObjectiveConfig
    shape: tuple
    steps: int
    bounds: ParamBounds = ParamBounds()
    frozen: dict = field(default_factory=dict)
    mode_select: int = None     # co-optimize which modes are active
    lift: float = 0.0

    def __post_init__(self):
        self._sim = None

    def __getstate__(self):
        state = dict(self.__dict__)
        state["_sim"] = None
        return state

    @property
    def n_sigma(self):
        return self.model.m if self.mode_select else 0

    @property
    def simulator(self):
        if self._sim is None:
            self._sim = ReducedSimulator(self.model, self.sim_config)
        return self._sim

    def decode(self, p):
        params = unpack(p, self.shape, self.bounds, self.frozen, self.n_sigma)
        selected = select_modes(params.sigma, self.mode_select) if self.mode_select else None
        return params, selected

    def rollout(self, params, selected=None):
        m_total = self.model.m
        sim = self.simulator
        return sim.simulate(lambda t: full_actuation(params, t, m_total, selected), self.steps,
                            sim.rest_state(self.lift))

    def __call__(self, p):
        try:
            with np.errstate(over="raise", invalid="raise", divide="raise"):
                params, selected = self.decode(p)
                J = evaluate_objective(self.rollout(params, selected), self.objective)
        except (FloatingPointError, np.linalg.LinAlgError, ValueError) as exc:
            log.debug("rollout failed: %s", exc)
            return PENALTY
        return J if np.isfinite(J) else PENALTY


def optimize_controller(model, sim_config, objective, cmaes_config=CmaesConfig(), shape=(1, 1),
                        steps=100, bounds=ParamBounds(), frozen=None, mode_select=None,
                        x0=None, lift=0.0, checkpoint=None, checkpoint_every=10, resume=False):
    """Optimize sinusoid parameters for ``shape = (modes, sinusoids)``.

    ``frozen`` fixes any of ``A``, ``T``, ``theta`` to given values. With
    ``mode_select`` set, a participation score per model mode is appended to
    the decision vector and the top ``mode_select`` modes are driven; then
    ``shape[0]`` must equal ``mode_select``.
    """
    frozen = dict(frozen or {})
    if mode_select and shape[0] != mode_select:
        raise ValueError("with mode selection the parameter shape must be (mode_select, k)")
    if not mode_select and shape[0] != model.m:
        raise ValueError(f"parameter shape {shape} does not match the model's {model.m} modes")
    fn = RolloutObjective(model, sim_config, objective, tuple(shape), steps, bounds, frozen,
                          mode_select, lift)
    if x0 is None:
        start = ActuationParams.zeros(*shape, bounds)
        if mode_select:
            start.sigma = np.zeros(model.m)
        x0 = pack(start, bounds, frozen)
    if len(x0) == 0:
        # everything frozen: a single rollout, repeated in the history
        J = fn(np.zeros(0))
        history = np.tile([J, J, 0.0], (cmaes_config.iterations, 1))
        return OptResult(np.zeros(0), J, history, 1, 0, fn.decode(np.zeros(0))[0])
    result = cmaes_minimize(fn, x0, cmaes_config.sigma0, cmaes_config, checkpoint,
                            checkpoint_every, resume)
    result.params = fn.decode(result.x_best)[0]
    return result
