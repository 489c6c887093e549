"""Command-line entry point: ``run``, ``eval``, ``render`` and ``gen-env``.

Every ``run`` flag has a config-file twin (dashes become underscores) read
from ``--config``; flags given on the command line win.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import explorer as ex
from .errors import BadConfig, ExploreError
from .evaluator import (REVEAL_RANGE_M, compare_report, evaluate_trajectory, ingest_external_trajectory,
                        load_reference_rows)
from .grid_map import Pose, load_belief, load_environment, save_environment
from .mazegen import generate_maze
from .policy import GreedyPolicy, NBVPolicy, ScriptedPolicy, VLMPolicy
from .render import render_annotated
from .state import ExplorationState, SensorConfig

log = logging.getLogger("vlm_explore")

EXIT_OK, EXIT_CONFIG, EXIT_BUDGET = 0, 1, 2
POLICIES = ("greedy", "nbv", "scripted", "vlm")


class CliError(Exception):
    """A user-facing configuration problem (exit status 1)."""


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in str(text).replace(" ", "").split(",") if t != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def add_run_arguments(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="key: value file with defaults for the flags below")
    p.add_argument("--env", default="maze", help="'maze' for the generator, or a .pgm environment file")
    p.add_argument("--seed", type=_int_list, default=[0], help="seed or comma-separated seeds (default 0)")
    p.add_argument("--width", type=float, default=10.0, help="maze width in meters")
    p.add_argument("--height", type=float, default=10.0, help="maze height in meters")
    p.add_argument("--rooms", type=int, default=3, help="maze room count")
    p.add_argument("--policy", default="greedy", choices=POLICIES)
    p.add_argument("--script", type=_int_list, default=None, help="labels for --policy scripted")
    p.add_argument("--nbv-radius", type=float, default=5.0, help="NBV gain radius in meters")
    p.add_argument("--sensor-fov", type=float, default=90.0, help="sensor FOV in degrees")
    p.add_argument("--sensor-rays", type=int, default=181)
    p.add_argument("--sensor-range", type=float, default=2.5, help="sensor range in meters")
    p.add_argument("--min-size", type=int, default=20, help="minimum frontier contour size (cells)")
    p.add_argument("--radius", type=float, default=3.0, help="candidate radius in meters")
    p.add_argument("--k", type=int, default=5, help="maximum number of candidates")
    p.add_argument("--blacklist-radius", type=float, default=0.5)
    p.add_argument("--max-steps", type=int, default=500)
    p.add_argument("--max-distance", type=float, default=2000.0)
    p.add_argument("--out", type=Path, default=Path("runs"), help="output root")
    p.add_argument("--jobs", type=int, default=1, help="parallel runs")
    p.add_argument("--frames", action="store_true", help="save an annotated frame per decision")


def _apply_config_file(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    first, _ = parser.parse_known_args(argv)
    config = getattr(first, "config", None)
    if config is not None:
        if not config.exists():
            raise CliError(f"--config: file not found: {config}")
        known = {a.dest: a for a in parser._actions}
        defaults = {}
        for key, raw in ex.read_config(config).items():
            dest = key.replace("-", "_")
            if dest not in known or dest in ("help", "config", "command"):
                raise CliError(f"--config: unknown key {key!r}")
            action = known[dest]
            if isinstance(action, argparse._StoreTrueAction):
                defaults[dest] = raw.lower() in ("1", "true", "yes", "on")
                continue
            try:
                defaults[dest] = action.type(raw) if action.type else raw
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise CliError(f"--{dest.replace('_', '-')}: bad value {raw!r} in config file ({exc})") from None
            if action.choices and defaults[dest] not in action.choices:
                raise CliError(f"--{dest.replace('_', '-')}: must be one of {', '.join(action.choices)}")
        parser.set_defaults(**defaults)
    return parser.parse_args(argv)


def _check(ok: bool, flag: str, rule: str, value) -> None:
    if not ok:
        raise CliError(f"--{flag} must be {rule} (got {value})")


def validate_run_args(a: argparse.Namespace) -> None:
    _check(a.k >= 1, "k", ">= 1", a.k)
    _check(a.min_size >= 1, "min-size", ">= 1", a.min_size)
    _check(a.radius > 0, "radius", "> 0", a.radius)
    _check(a.blacklist_radius >= 0, "blacklist-radius", ">= 0", a.blacklist_radius)
    _check(0 < a.sensor_fov <= 360, "sensor-fov", "in (0, 360] degrees", a.sensor_fov)
    _check(a.sensor_rays >= 2, "sensor-rays", ">= 2", a.sensor_rays)
    _check(a.sensor_range > 0, "sensor-range", "> 0", a.sensor_range)
    _check(a.max_steps >= 1, "max-steps", ">= 1", a.max_steps)
    _check(a.max_distance > 0, "max-distance", "> 0", a.max_distance)
    _check(a.jobs >= 1, "jobs", ">= 1", a.jobs)
    _check(a.nbv_radius > 0, "nbv-radius", "> 0", a.nbv_radius)
    _check(len(a.seed) >= 1 and all(s >= 0 for s in a.seed), "seed", "non-negative integers", a.seed)
    if a.env != "maze":
        _check(Path(a.env).exists(), "env", "'maze' or an existing file", a.env)
    else:
        _check(a.width >= 4 and a.height >= 4, "width/--height", ">= 4 m", (a.width, a.height))
        _check(a.rooms >= 0, "rooms", ">= 0", a.rooms)
    if a.policy == "scripted":
        _check(bool(a.script), "script", "a non-empty label list for --policy scripted", a.script)


def _environment(a, seed: int):
    if a.env == "maze":
        return generate_maze(seed, a.width, a.height, a.rooms)
    return load_environment(a.env)


def _policy(a):
    if a.policy == "greedy":
        return GreedyPolicy()
    if a.policy == "nbv":
        return NBVPolicy(a.nbv_radius)
    if a.policy == "scripted":
        return ScriptedPolicy(a.script)
    from .vlm_client import open_session

    return VLMPolicy(open_session())


def explorer_config(a, frames_dir: Path | None = None) -> ex.ExplorerConfig:
    return ex.ExplorerConfig(
        sensor=SensorConfig(math.radians(a.sensor_fov), a.sensor_rays, a.sensor_range),
        min_size=a.min_size,
        radius=a.radius,
        k=a.k,
        blacklist_radius=a.blacklist_radius,
        max_steps=a.max_steps,
        max_distance=a.max_distance,
        frames_dir=str(frames_dir) if frames_dir else None,
    )


def run_dir_for(out: Path, env_name: str, policy: str, seed: int) -> Path:
    return out / f"{env_name}_{policy}_seed{seed}"


def _run_one(a: argparse.Namespace, seed: int) -> tuple[str, str]:
    gt = _environment(a, seed)
    out = run_dir_for(a.out, gt.name, a.policy, seed)
    config = explorer_config(a, out / "frames" if a.frames else None)
    record = ex.run_exploration(gt, None, _policy(a), config, seed)
    extra = {
        "env_source": a.env,
        "maze_width_m": a.width,
        "maze_height_m": a.height,
        "maze_rooms": a.rooms,
        "script": ",".join(map(str, a.script)) if a.script else "",
        "nbv_radius": a.nbv_radius,
    }
    if a.policy == "vlm":
        from .vlm_client import VLMConfig

        extra.update({f"vlm_{k}": v for k, v in VLMConfig.from_env().redacted().items()})
    ex.write_run(record, gt, out, extra)
    return str(out), record.reason


def cmd_run(a: argparse.Namespace) -> int:
    validate_run_args(a)
    if a.policy == "vlm":
        from .vlm_client import VLMConfig, open_session

        open_session(VLMConfig.from_env())  # fail fast on a bad endpoint
    seeds = a.seed
    if a.jobs > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=a.jobs) as pool:
            results = list(pool.map(_run_one, [a] * len(seeds), seeds))
    else:
        results = [_run_one(a, s) for s in seeds]
    status = EXIT_OK
    for out, reason in results:
        print(f"{out}\t{reason}")
        if reason != ex.COMPLETE:
            status = EXIT_BUDGET
    return status


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def load_run(run_dir: str | Path):
    """(environment map, trajectory, config snapshot) from a ``run`` output directory."""
    d = Path(run_dir)
    for name in ("config.txt", "trajectory.csv", "env.pgm"):
        if not (d / name).exists():
            raise CliError(f"{d}: not a run directory (missing {name})")
    config = ex.read_config(d / "config.txt")
    gt = load_environment(d / "env.pgm")
    trajectory = ingest_external_trajectory(d / "trajectory.csv")
    return gt, trajectory, config


def _external(spec: str) -> tuple[str, Path]:
    method, sep, path = spec.partition("=")
    if not sep or not method or not path:
        raise argparse.ArgumentTypeError(f"expected METHOD=PATH, got {spec!r}")
    return method, Path(path)


def cmd_eval(a: argparse.Namespace) -> int:
    _check(0 < a.fov <= 360, "fov", "in (0, 360] degrees", a.fov)
    _check(a.range > 0, "range", "> 0", a.range)
    if not a.runs and not a.external and a.reference is None:
        raise CliError("eval needs at least one run directory, --external or --reference")
    fov = math.radians(a.fov)
    evaluations = []
    shared, shared_name = None, None
    for run_dir in a.runs:
        gt, traj, config = load_run(run_dir)
        env = config.get("environment", gt.name)
        if shared is None:
            shared, shared_name = gt, env
        evaluations.append(evaluate_trajectory(gt, traj, config.get("method", "run"), env, fov, a.range,
                                               start=gt.start.xy if gt.start else None))
    if a.env is not None:
        shared = load_environment(a.env)
        shared_name = shared.name
    for method, path in a.external:
        if shared is None:
            raise CliError("--external needs --env or a run directory to supply the environment")
        if not path.exists():
            raise CliError(f"--external: file not found: {path}")
        traj = ingest_external_trajectory(path)
        start = shared.start.xy if shared.start else None
        evaluations.append(evaluate_trajectory(shared, traj, method, shared_name, fov, a.range, start=start))
    references = load_reference_rows(a.reference) if a.reference is not None else ()
    tag = "" if a.fov == 360 else f"_fov{a.fov:g}"
    compare_report(evaluations, a.out, references, tag=tag, plots=a.plots)
    print(a.out / "summary.csv")
    return EXIT_OK


# ---------------------------------------------------------------------------
# render
# ---------------------------------------------------------------------------


def _state_from_run(run_dir: Path, trajectory, headings, upto: int | None = None) -> ExplorationState:
    import json

    scans = []
    with open(run_dir / "events.jsonl") as fh:
        for line in fh:
            event = json.loads(line)
            if event["type"] == "scan":
                scans.append(tuple(event["position"]))
    traj = list(trajectory[: None if upto is None else upto + 1])
    heads = list(headings[: len(traj)]) if headings else [0.0] * len(traj)
    if upto is not None:
        reached = set(traj)
        scans = [s for s in scans if s in reached]
    pose = Pose(traj[-1][0], traj[-1][1], heads[-1] if heads else 0.0)
    return ExplorationState(pose=pose, trajectory=traj, headings=heads, scan_locations=scans)


def _read_headings(path: Path) -> list[float]:
    import csv

    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and "heading_rad" in rows[0]:
        return [float(r["heading_rad"]) for r in rows]
    return []


def cmd_render(a: argparse.Namespace) -> int:
    import json

    d = Path(a.run)
    gt, trajectory, _ = load_run(d)
    if not (d / "belief.pgm").exists() or not (d / "events.jsonl").exists():
        raise CliError(f"{d}: run directory lacks belief.pgm or events.jsonl")
    belief = load_belief(d / "belief.pgm", gt.resolution)
    headings = _read_headings(d / "trajectory.csv")
    out = a.out or d / "final.png"
    out.parent.mkdir(parents=True, exist_ok=True)
    render_annotated(belief, _state_from_run(d, trajectory, headings), (), path=out, scale=a.scale)
    print(out)
    if a.frames:
        frames = out.parent / "render_frames"
        frames.mkdir(exist_ok=True)
        with open(d / "events.jsonl") as fh:
            decisions = [e for e in map(json.loads, fh) if e["type"] == "decision"]
        for i, event in enumerate(decisions):
            state = _state_from_run(d, trajectory, headings, event.get("traj_index", 0))
            render_annotated(belief, state, (), path=frames / f"decision_{i:04d}.png", scale=a.scale)
        print(frames)
    return EXIT_OK


# ---------------------------------------------------------------------------
# gen-env
# ---------------------------------------------------------------------------


def cmd_gen_env(a: argparse.Namespace) -> int:
    _check(a.width >= 4 and a.height >= 4, "width/--height", ">= 4 m", (a.width, a.height))
    a.out.mkdir(parents=True, exist_ok=True)
    for seed in a.seed:
        gt = generate_maze(seed, a.width, a.height, a.rooms)
        print(save_environment(gt, a.out / f"{gt.name}.pgm"))
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vlm-explore", description="Frontier exploration experiments.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="explore environments and write run records")
    add_run_arguments(run)
    run.set_defaults(func=cmd_run)

    ev = sub.add_parser("eval", help="privileged coverage and comparison report")
    ev.add_argument("runs", nargs="*", type=Path, help="run directories")
    ev.add_argument("--external", type=_external, action="append", default=[], metavar="METHOD=PATH",
                    help="external trajectory CSV to evaluate as METHOD")
    ev.add_argument("--env", type=Path, help="environment .pgm for external trajectories")
    ev.add_argument("--reference", type=Path, help="CSV of published rows copied verbatim into the table")
    ev.add_argument("--fov", type=float, default=360.0, help="reveal FOV in degrees")
    ev.add_argument("--range", type=float, default=REVEAL_RANGE_M, help="reveal range in meters")
    ev.add_argument("--out", type=Path, default=Path("report"))
    ev.add_argument("--plots", action="store_true", help="also write PNG plots")
    ev.set_defaults(func=cmd_eval)

    rd = sub.add_parser("render", help="annotated PNG of a finished run")
    rd.add_argument("run", type=Path, help="run directory")
    rd.add_argument("--out", type=Path, help="output PNG (default <run>/final.png)")
    rd.add_argument("--scale", type=int, default=2)
    rd.add_argument("--frames", action="store_true", help="also render one frame per decision")
    rd.set_defaults(func=cmd_render)

    gen = sub.add_parser("gen-env", help="write procedurally generated mazes as .pgm/.meta")
    gen.add_argument("--seed", type=_int_list, default=[0])
    gen.add_argument("--width", type=float, default=10.0)
    gen.add_argument("--height", type=float, default=10.0)
    gen.add_argument("--rooms", type=int, default=3)
    gen.add_argument("--out", type=Path, default=Path("envs"))
    gen.set_defaults(func=cmd_gen_env)
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "run" and args.config is not None:
            run_parser = parser._subparsers._group_actions[0].choices["run"]
            args = _apply_config_file(run_parser, argv[argv.index("run") + 1:])
            args.command, args.func, args.verbose = "run", cmd_run, "-v" in argv or "--verbose" in argv
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except SystemExit as exc:  # argparse usage errors
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    except (CliError, BadConfig) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ExploreError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
