"""Command-line entry point: ``softgait <command> CONFIG [options]``.

Commands
--------
precompute  build the reduced model and write ``model.sgm``
simulate    roll out a controller and write the trajectory and per-step stats
optimize    run CMA-ES over the controller parameters
modes       export actuation modes as OBJ files plus their eigenvalues
bench       time reduced steps, excluding precomputation and I/O

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.
"""

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .actuation import ActuationParams, full_actuation, select_modes
from .config import OUTPUT_ENV, RunConfig
from .errors import ArtifactError, ConfigError, EigenSolveError, FactorizationError
from .mesh import boundary_faces, build_operators, unflatten_positions, write_obj
from .opt import evaluate_objective, optimize_controller
from .pipeline import actuation_modes, load_config_mesh, precompute
from .reduce import ReducedModel
from .sim import ReducedSimulator, Trajectory

log = logging.getLogger("softgait")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
MODEL_FILE = "model.sgm"
TRAJ_FILE = "trajectory.sgt"
PARAMS_FILE = "best_params.json"
CHECKPOINT_FILE = "checkpoint.sgc"


def _output_dir(config, args):
    out = Path(args.output_dir) if getattr(args, "output_dir", None) else \
        config.resolved_output_dir()
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_config(args):
    config = RunConfig.load(args.config)
    overrides = {"seed": args.seed, "steps": getattr(args, "steps", None),
                 "cmaes.iterations": getattr(args, "iterations", None),
                 "cmaes.population": getattr(args, "population", None)}
    return config.with_overrides(**overrides).validate()


def _model_path(config, args, out):
    return Path(args.model) if getattr(args, "model", None) else out / MODEL_FILE


def _load_model(path):
    if not path.is_file():
        raise ArtifactError(f"model artifact {path} not found; run 'softgait precompute' first")
    return ReducedModel.load(path)


def _sim_config(config, model):
    cfg = config.sim_config()
    if abs(cfg.h - model.h) > 1e-12 * model.h:
        raise ConfigError(f"config timestep {cfg.h} differs from the model's {model.h}")
    return cfg


def _write_params(path, params, selected, J=None):
    data = params.to_dict()
    if selected is not None:
        data["selected"] = [int(i) for i in selected]
    if J is not None:
        data["J"] = float(J)
    Path(path).write_text(json.dumps(data, indent=2) + "\n")


def _read_params(path, config, model):
    if path is None:
        params = ActuationParams.zeros(*config.shape, config.param_bounds())
        return params, None
    try:
        data = json.loads(Path(path).read_text())
        params = ActuationParams.from_dict(data)
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"cannot read controller parameters {path}: {exc}") from exc
    selected = data.get("selected")
    rows = params.shape[0]
    if selected is not None:
        if len(selected) != rows or max(selected) >= model.m:
            raise ConfigError(f"selected modes {selected} do not fit a {model.m}-mode model")
    elif rows != model.m:
        raise ConfigError(f"parameters drive {rows} modes but the model has {model.m}")
    return params, selected


# Commands -------------------------------------------------------------------

def cmd_precompute(args):
    config = _load_config(args)
    out = _output_dir(config, args)
    t0 = time.perf_counter()
    pre = precompute(config)
    elapsed = time.perf_counter() - t0
    model = pre.model
    path = _model_path(config, args, out)
    model.save(path)
    print(f"mesh: {pre.mesh.n_vertices} vertices, {pre.mesh.n_tets} tets")
    print(f"subspace: w={config.subspace.w} r={model.r} m={model.m} k={config.subspace.k} "
          f"|Cp|={model.passive.count} |Ca|={model.active.count} "
          f"|I|={len(model.contact_samples)}")
    print(f"rigid modes discarded: {pre.modes.n_rigid}")
    print(f"precompute time: {elapsed:.3f} s")
    print(f"wrote {path}")
    return EXIT_OK


def trajectory_terms(traj, objective):
    """Per-frame running objective terms for the stats CSV."""
    v = np.asarray(objective.direction, float)
    u0 = np.asarray(objective.forward, float)
    disp = -(traj.com - traj.com[0]) @ v
    align = np.minimum.accumulate(traj.frames @ u0 @ v)
    height = np.cumsum(traj.com[:, 1]) / np.arange(1, len(traj.com) + 1)
    return disp, align, -height


def cmd_simulate(args):
    config = _load_config(args)
    out = _output_dir(config, args)
    model = _load_model(_model_path(config, args, out))
    sim = ReducedSimulator(model, _sim_config(config, model))
    params, selected = _read_params(args.params, config, model)
    objective = config.objective_config()

    state = sim.rest_state(config.lift)
    zs = [state.z]
    wall = []
    for _ in range(config.steps):
        a = full_actuation(params, state.t + sim.config.h, model.m, selected)
        t0 = time.perf_counter()
        state = sim.step(state, a)
        wall.append(time.perf_counter() - t0)
        zs.append(state.z)
    traj = Trajectory.from_reduced(np.array(zs), model, sim.config)
    traj.save(out / TRAJ_FILE, model)

    disp, align, height = trajectory_terms(traj, objective)
    with open(out / "stats.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "time", "com_x", "com_y", "com_z", "j_disp", "j_align",
                         "j_height", "step_seconds"])
        for s in range(1, traj.steps + 1):
            writer.writerow([s, f"{s * traj.h:.10g}", *(f"{c:.12g}" for c in traj.com[s]),
                             f"{disp[s]:.12g}", f"{align[s]:.12g}", f"{height[s]:.12g}",
                             f"{wall[s - 1]:.6e}"])
    J = evaluate_objective(traj, objective)
    print(f"steps: {traj.steps}  J({objective.kind}) = {J:.6g}")
    print(f"com displacement: {np.array2string(traj.com[-1] - traj.com[0], precision=5)}")
    print(f"mean step time: {np.mean(wall) * 1e3:.3f} ms")
    return EXIT_OK


def cmd_optimize(args):
    config = _load_config(args)
    if args.jobs is not None:
        config = config.with_overrides(**{"cmaes.jobs": args.jobs,
                                          "cmaes.parallel_rollouts": args.jobs > 1})
    out = _output_dir(config, args)
    path = _model_path(config, args, out)
    if path.is_file():
        model = ReducedModel.load(path)
    else:
        model = precompute(config).model
        model.save(path)
    sim_cfg = _sim_config(config, model)
    cm = config.cmaes_config()
    print(f"CMA-ES: population {cm.population}, iterations {cm.iterations}, "
          f"sigma0 {cm.sigma0}, seed {cm.seed}")
    t0 = time.perf_counter()
    result = optimize_controller(
        model, sim_cfg, config.objective_config(), cm, config.shape, config.steps,
        config.param_bounds(), config.frozen, config.mode_select, lift=config.lift,
        checkpoint=out / CHECKPOINT_FILE, checkpoint_every=args.checkpoint_every,
        resume=args.resume)
    elapsed = time.perf_counter() - t0

    selected = None
    if config.mode_select:
        selected = select_modes(result.params.sigma, config.mode_select)
    _write_params(out / PARAMS_FILE, result.params, selected, result.f_best)
    with open(out / "history.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "best_J", "median_J", "sigma"])
        for i, row in enumerate(result.history, 1):
            writer.writerow([i, *(f"{v:.12g}" for v in row)])
    print(f"final J = {result.f_best:.6g} after {result.evaluations} evaluations "
          f"({result.restarts} restarts)")
    print(f"optimization time: {elapsed:.2f} s")
    return EXIT_OK


def cmd_modes(args):
    config = _load_config(args)
    out = _output_dir(config, args)
    mesh = load_config_mesh(config)
    ops = build_operators(mesh)
    modes, Dbar = actuation_modes(mesh, ops, config.subspace.m, config.display_fraction)
    faces = boundary_faces(mesh)
    write_obj(out / "rest.obj", mesh.vertices, faces)
    for i in range(modes.m):
        x = Dbar[:, -1] + args.amplitude * Dbar[:, i]
        write_obj(out / f"mode_{i:02d}.obj", unflatten_positions(x), faces)
    with open(out / "eigenvalues.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mode", "eigenvalue"])
        for i, lam in enumerate(modes.eigenvalues):
            writer.writerow([i, f"{lam:.12g}"])
    print(f"wrote {modes.m} modes ({modes.n_rigid} rigid modes discarded) to {out}")
    return EXIT_OK


def cmd_bench(args):
    config = _load_config(args)
    t0 = time.perf_counter()
    pre = precompute(config)
    t_pre = time.perf_counter() - t0
    model = pre.model
    sim = ReducedSimulator(model, _sim_config(config, model))
    rng = np.random.default_rng(config.seed)
    amps = rng.uniform(-1, 1, model.m)
    state = sim.rest_state(config.lift)
    for _ in range(args.warmup):
        state = sim.step(state, amps * np.sin(2 * np.pi * state.t))
    state = sim.rest_state(config.lift)
    t0 = time.perf_counter()
    for _ in range(config.steps):
        state = sim.step(state, amps * np.sin(2 * np.pi * state.t))
    per_step = (time.perf_counter() - t0) / config.steps
    print(f"mesh: {pre.mesh.n_vertices} vertices, {pre.mesh.n_tets} tets; r={model.r} "
          f"|Cp|={model.passive.count} |Ca|={model.active.count} "
          f"|I|={len(model.contact_samples)}")
    print(f"precompute: {t_pre:.3f} s")
    print(f"per step: {per_step * 1e3:.3f} ms over {config.steps} steps")
    return EXIT_OK


# Parser ---------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="softgait", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", help="run configuration (JSON)")
        p.add_argument("-o", "--output-dir",
                       help=f"output directory (default: config, ${OUTPUT_ENV}, ./softgait_out)")
        p.add_argument("--seed", type=int)
        p.set_defaults(func=func)
        return p

    add("precompute", cmd_precompute, "build and save the reduced model")
    p = add("simulate", cmd_simulate, "simulate a controller")
    p.add_argument("--params", help="controller parameters JSON (default: zero actuation)")
    p.add_argument("--model", help="model artifact (default: OUTPUT/model.sgm)")
    p.add_argument("--steps", type=int)
    p = add("optimize", cmd_optimize, "optimize a controller with CMA-ES")
    p.add_argument("--model", help="model artifact (built if missing)")
    p.add_argument("--resume", action="store_true", help="continue from the checkpoint")
    p.add_argument("--jobs", type=int, help="parallel rollout processes")
    p.add_argument("--iterations", type=int)
    p.add_argument("--population", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--checkpoint-every", type=int, default=10)
    p = add("modes", cmd_modes, "export actuation modes")
    p.add_argument("--amplitude", type=float, default=1.0,
                   help="mode amplitude for the displaced OBJ files")
    p = add("bench", cmd_bench, "time reduced simulation steps")
    p.add_argument("--steps", type=int)
    p.add_argument("--warmup", type=int, default=5)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ArtifactError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (EigenSolveError, FactorizationError, FloatingPointError,
            np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
