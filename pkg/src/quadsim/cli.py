"""Command-line front end: ``quadsim simulate | benchmark | inspect | plot``.

Exit codes: 0 success, 1 bad input or configuration, 2 runtime failure
(including the Euler-angle singularity). Set QUADSIM_LOG (DEBUG, INFO,
WARNING, ...) to control log verbosity.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .dynamics import coriolis_vector, gravity_vector, mass_matrix
from .kinematics import SingularityError, contact_jacobian, forward_kinematics
from .model import (
    LEG_NAMES,
    N_DOF,
    N_JOINTS,
    ConfigError,
    RobotModel,
    default_robot,
    load_robot_file,
)
from .sim import (
    DEFAULT_H,
    DEFAULT_KD,
    DEFAULT_KP,
    DEFAULT_TORQUE_LIMIT,
    PDTorque,
    ProfileTorque,
    Scenario,
    SimulationError,
    default_stance,
    log_columns,
    run,
    summarize,
    zero_torque,
)

logger = logging.getLogger("quadsim")

EXIT_OK, EXIT_INPUT, EXIT_RUNTIME = 0, 1, 2

# Optimized MATLAB timings used as upper bounds, seconds per evaluation.
REFERENCE_TIMES = {"M": 0.041, "C": 0.107, "G": 0.01, "J_C": 0.01}


class _Parser(argparse.ArgumentParser):
    """argparse that exits with status 1 on usage errors (unknown flags etc.)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


# --------------------------------------------------------------------------
# Scenario files
# --------------------------------------------------------------------------

@dataclass
class ScenarioSpec:
    robot: str | None = None
    duration: float = 3.0
    h: float = DEFAULT_H
    torque: str = "pd"              # pd | profile | zero
    profile: str | None = None
    stabilization: bool = True
    log_stride: int = 1
    mu: float | None = None
    height: float | None = 0.3      # None: feet on the ground
    q0: list | None = None
    qdot0: list | None = None
    kp: float = DEFAULT_KP
    kd: float = DEFAULT_KD
    torque_limit: float = DEFAULT_TORQUE_LIMIT
    q_ref: list | None = None
    name: str = "scenario"
    base_dir: Path = field(default_factory=Path.cwd)

    def validate(self) -> None:
        if not (self.duration >= 0 and math.isfinite(self.duration)):
            raise ConfigError(f"duration must be >= 0, got {self.duration}", field="duration")
        if not (self.h > 0 and math.isfinite(self.h)):
            raise ConfigError(f"step h must be > 0, got {self.h}", field="h")
        if self.torque not in ("pd", "profile", "zero"):
            raise ConfigError(f"torque must be pd, profile or zero, got {self.torque!r}",
                              field="torque")
        if self.torque == "profile" and not self.profile:
            raise ConfigError("torque = profile needs a profile file", field="profile")
        if self.log_stride < 1:
            raise ConfigError("log_stride must be >= 1", field="log_stride")
        if self.mu is not None and not self.mu >= 0:
            raise ConfigError(f"mu must be >= 0, got {self.mu}", field="mu")
        if self.kp < 0 or self.kd < 0:
            raise ConfigError("PD gains must be >= 0", field="kp")
        for name, vec, n in (("q", self.q0, N_DOF), ("qdot", self.qdot0, N_DOF),
                             ("q_ref", self.q_ref, N_JOINTS)):
            if vec is not None and len(vec) != n:
                raise ConfigError(f"{name} needs {n} values, got {len(vec)}", field=name)

    def build(self, model: RobotModel) -> Scenario:
        self.validate()
        if self.q0 is not None:
            q0 = np.array(self.q0, dtype=float)
        else:
            q0 = default_stance(model, self.height)
        q_ref = (np.array(self.q_ref, dtype=float) if self.q_ref is not None
                 else default_stance(model)[N_DOF - N_JOINTS:])
        if self.torque == "pd":
            torque = PDTorque(q_ref, self.kp, self.kd, self.torque_limit)
        elif self.torque == "profile":
            path = self.base_dir / self.profile
            try:
                torque = ProfileTorque.from_csv(path)
            except (OSError, ValueError) as exc:
                raise ConfigError(f"cannot read torque profile {path}: {exc}") from None
        else:
            torque = zero_torque
        qdot0 = None if self.qdot0 is None else np.array(self.qdot0, dtype=float)
        return Scenario(q0=q0, qdot0=qdot0, duration=self.duration, h=self.h, torque=torque,
                        stabilization=self.stabilization, log_stride=self.log_stride, mu=self.mu)


_SCENARIO_KEYS = {
    "scenario": {"robot", "duration", "h", "torque", "profile", "stabilization",
                 "log_stride", "mu"},
    "initial": {"height", "q", "qdot"},
    "pd": {"kp", "kd", "limit", "q_ref"},
}


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.replace(",", " ").split()]


def load_scenario(path) -> ScenarioSpec:
    """Read an INI scenario file ([scenario], [initial], [pd] sections)."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read scenario file {path}: {exc.strerror}") from None
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    sc = ScenarioSpec(name=path.stem, base_dir=path.parent)
    for section in cp.sections():
        if section not in _SCENARIO_KEYS:
            raise ConfigError(f"{path}: unknown section [{section}]", field=section)
        extra = set(cp[section]) - _SCENARIO_KEYS[section]
        if extra:
            raise ConfigError(f"{path}: unknown key(s) in [{section}]: {', '.join(sorted(extra))}",
                              field=sorted(extra)[0])
    try:
        if cp.has_section("scenario"):
            s = cp["scenario"]
            sc.robot = s.get("robot", sc.robot)
            sc.duration = s.getfloat("duration", sc.duration)
            sc.h = s.getfloat("h", sc.h)
            sc.torque = s.get("torque", sc.torque).strip()
            sc.profile = s.get("profile", sc.profile)
            sc.stabilization = s.getboolean("stabilization", sc.stabilization)
            sc.log_stride = s.getint("log_stride", sc.log_stride)
            if "mu" in s:
                sc.mu = s.getfloat("mu")
        if cp.has_section("initial"):
            s = cp["initial"]
            if "height" in s:
                sc.height = None if s["height"].strip() == "ground" else s.getfloat("height")
            if "q" in s:
                sc.q0 = _floats(s["q"])
            if "qdot" in s:
                sc.qdot0 = _floats(s["qdot"])
        if cp.has_section("pd"):
            s = cp["pd"]
            sc.kp = s.getfloat("kp", sc.kp)
            sc.kd = s.getfloat("kd", sc.kd)
            sc.torque_limit = s.getfloat("limit", sc.torque_limit)
            if "q_ref" in s:
                sc.q_ref = _floats(s["q_ref"])
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if sc.robot is not None and not Path(sc.robot).is_absolute():
        sc.robot = str(path.parent / sc.robot)
    return sc


def _load_model(path: str | None, mu: float | None = None) -> RobotModel:
    if path is None:
        model = default_robot()
    else:
        if not Path(path).is_file():
            raise ConfigError(f"robot file not found: {path}")
        model = load_robot_file(path)
    if mu is not None:
        if not mu >= 0:
            raise ConfigError(f"mu must be >= 0, got {mu}", field="mu")
        model = replace(model, mu=mu)
    return model


# --------------------------------------------------------------------------
# simulate
# --------------------------------------------------------------------------

def _log_to_json(log) -> str:
    arr = log.as_array()
    return json.dumps({c: arr[:, i].tolist() for i, c in enumerate(log_columns())})


def _simulate_one(sc: ScenarioSpec, robot: str | None, mu: float | None,
                  out: Path, fmt: str) -> dict:
    model = _load_model(robot if robot is not None else sc.robot, mu)
    scenario = sc.build(model)
    t0 = time.perf_counter()
    log = run(model, scenario)
    wall = time.perf_counter() - t0
    out.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "json":
        out.write_text(_log_to_json(log))
    else:
        log.to_csv(out)
    summary = summarize(model, log)
    summary.update(name=sc.name, output=str(out), wall_time=wall)
    return summary


def _print_summary(s: dict) -> None:
    print(f"[{s['name']}] wrote {s['samples']} samples to {s['output']} "
          f"({s['wall_time']:.2f} s wall)")
    q = s["final_q"]
    print(f"  final base position: x={q[0]:.4f} y={q[1]:.4f} z={q[2]:.4f} m; "
          f"roll={q[3]:.4f} pitch={q[4]:.4f} yaw={q[5]:.4f} rad")
    print(f"  energy drift: {s['energy_drift']:.6g} J")
    print(f"  max penetration: {s['max_penetration']:.3g} m")
    print(f"  contact solver: mean {s['solver_mean_iters']:.2f} iterations, "
          f"max residual {s['solver_max_residual']:.3g}")


def cmd_simulate(args) -> int:
    try:
        scenarios = [load_scenario(p) for p in args.scenario] if args.scenario else [ScenarioSpec(name="drop")]
        for sc in scenarios:
            if args.duration is not None:
                sc.duration = args.duration
            if args.h is not None:
                sc.h = args.h
            if args.no_stabilization:
                sc.stabilization = False
            sc.validate()
        ext = "json" if args.format == "json" else "csv"
        if len(scenarios) == 1:
            outs = [Path(args.out) if args.out else Path(f"trajectory.{ext}")]
        else:
            base = Path(args.out) if args.out else Path(".")
            outs = [base / f"{s.name}.{ext}" for s in scenarios]
        if args.robot is not None:
            _load_model(args.robot, args.mu)  # fail fast on a bad robot file
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT

    jobs = [(sc, args.robot, args.mu, out, args.format) for sc, out in zip(scenarios, outs)]
    try:
        if args.jobs > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                summaries = list(pool.map(_simulate_star, jobs))
        else:
            summaries = [_simulate_one(*j) for j in jobs]
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (SimulationError, SingularityError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"simulation failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for s in summaries:
        _print_summary(s)
    return EXIT_OK


def _simulate_star(job):
    return _simulate_one(*job)


# --------------------------------------------------------------------------
# benchmark
# --------------------------------------------------------------------------

def random_states(n: int, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Random non-singular configurations and velocities for timing and tests."""
    rng = np.random.default_rng(seed)
    q = np.zeros((n, N_DOF))
    q[:, :3] = rng.uniform(-1.0, 1.0, (n, 3))
    q[:, 3:6] = rng.uniform(-1.2, 1.2, (n, 3))
    q[:, 6:] = rng.uniform(-1.5, 1.5, (n, N_JOINTS))
    qdot = rng.uniform(-2.0, 2.0, (n, N_DOF))
    return q, qdot


def benchmark(model: RobotModel, n: int = 1000, seed: int = 0,
              reference: bool = False) -> list[dict]:
    """Time n evaluations of M, C (analytic), G and J_C; optionally the reference C path."""
    q, qdot = random_states(n, seed)
    terms = [
        ("M", lambda i: mass_matrix(model, q[i])),
        ("C", lambda i: coriolis_vector(model, q[i], qdot[i])),
        ("G", lambda i: gravity_vector(model, q[i])),
        ("J_C", lambda i: contact_jacobian(model, q[i])),
    ]
    if reference:
        terms.append(("C_reference", lambda i: coriolis_vector(model, q[i], qdot[i],
                                                               method="reference")))
    rows = []
    for name, fn in terms:
        count = n if name != "C_reference" else min(n, 20)
        fn(0)  # warm caches
        times = np.empty(count)
        for i in range(count):
            t0 = time.perf_counter()
            fn(i)
            times[i] = time.perf_counter() - t0
        rows.append({
            "term": name,
            "n": count,
            "mean_s": float(times.mean()),
            "p50_s": float(np.percentile(times, 50)),
            "p95_s": float(np.percentile(times, 95)),
            "max_s": float(times.max()),
            "bound_s": REFERENCE_TIMES.get(name, math.nan),
        })
    return rows


def cmd_benchmark(args) -> int:
    try:
        model = _load_model(args.robot, args.mu)
        if args.n < 1:
            raise ConfigError("-n must be >= 1")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    rows = benchmark(model, args.n, args.seed, args.reference)
    keys = ["term", "n", "mean_s", "p50_s", "p95_s", "max_s", "bound_s"]
    if args.format == "csv":
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
        text = buf.getvalue()
    elif args.format == "json":
        text = json.dumps(rows, indent=2) + "\n"
    else:
        lines = [f"{'term':<12}{'n':>6}{'mean [ms]':>12}{'p50 [ms]':>11}{'p95 [ms]':>11}"
                 f"{'max [ms]':>11}{'bound [ms]':>12}"]
        for r in rows:
            lines.append(f"{r['term']:<12}{r['n']:>6}{1e3 * r['mean_s']:>12.3f}"
                         f"{1e3 * r['p50_s']:>11.3f}{1e3 * r['p95_s']:>11.3f}"
                         f"{1e3 * r['max_s']:>11.3f}{1e3 * r['bound_s']:>12.1f}")
        text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


# --------------------------------------------------------------------------
# inspect
# --------------------------------------------------------------------------

def snapshot(model: RobotModel, q) -> dict:
    """FK poses, foot heights, M eigenvalue range and G at q."""
    q = np.asarray(q, dtype=float)
    M = mass_matrix(model, q)
    G = gravity_vector(model, q)
    frames = forward_kinematics(model, q)
    eig = np.linalg.eigvalsh(M)
    return {
        "q": q.tolist(),
        "frames": {name: {"position": frames.pos[i].tolist(), "rotation": frames.rot[i].tolist()}
                   for i, name in enumerate(frames.tree.names)},
        "feet": {leg: frames.feet[k].tolist() for k, leg in enumerate(LEG_NAMES)},
        "foot_heights": {leg: float(frames.feet[k, 2]) for k, leg in enumerate(LEG_NAMES)},
        "total_mass": model.total_mass,
        "mass_matrix_eigenvalues": [float(eig[0]), float(eig[-1])],
        "gravity_vector": G.tolist(),
    }


def cmd_inspect(args) -> int:
    try:
        model = _load_model(args.robot, args.mu)
        if args.q is not None and args.q_file is not None:
            raise ConfigError("give either --q or --q-file, not both")
        if args.q is not None:
            q = _floats(args.q)
        elif args.q_file is not None:
            try:
                q = _floats(Path(args.q_file).read_text())
            except OSError as exc:
                raise ConfigError(f"cannot read {args.q_file}: {exc.strerror}") from None
        else:
            q = [0.0] * N_DOF
        if len(q) != N_DOF:
            raise ConfigError(f"q needs {N_DOF} values, got {len(q)}")
        if not all(math.isfinite(v) for v in q):
            raise ConfigError("q has non-finite entries")
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        snap = snapshot(model, q)
    except SingularityError as exc:
        print(f"singularity: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    if args.json:
        print(json.dumps(snap, indent=2))
        return EXIT_OK
    print(f"robot: {model.name}  total mass {model.total_mass:.3f} kg")
    print("frames (world position):")
    for name, fr in snap["frames"].items():
        x, y, z = fr["position"]
        print(f"  {name:<12} {x:+.4f} {y:+.4f} {z:+.4f}")
    print("feet:")
    for leg, p in snap["feet"].items():
        print(f"  {leg}  {p[0]:+.4f} {p[1]:+.4f} {p[2]:+.4f}  (height {p[2]:+.4f} m)")
    lo, hi = snap["mass_matrix_eigenvalues"]
    print(f"M eigenvalues: min {lo:.6g}, max {hi:.6g}")
    print("G: " + " ".join(f"{v:+.4g}" for v in snap["gravity_vector"]))
    return EXIT_OK


# --------------------------------------------------------------------------
# plot
# --------------------------------------------------------------------------

def cmd_plot(args) -> int:
    from .sim import TrajectoryLog
    try:
        log = TrajectoryLog.from_csv(args.csv)
    except (OSError, ValueError) as exc:
        print(f"error: cannot read trajectory {args.csv}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(args.out or Path(args.csv).with_suffix(""))
    out.mkdir(parents=True, exist_ok=True)
    t = log.times()
    h = np.diff(t).min() if len(t) > 1 else 1.0
    panels = {
        "base_height.png": (lambda ax: ax.plot(t, log.positions()[:, 2]), "base z [m]"),
        "energy.png": (lambda ax: (ax.plot(t, log.K, label="K"), ax.plot(t, log.P, label="P"),
                                   ax.plot(t, log.energy(), label="K+P"), ax.legend()),
                       "energy [J]"),
        "contact_forces.png": (lambda ax: ([ax.plot(t, log.impulses()[:, k, 0] / h, label=leg)
                                            for k, leg in enumerate(LEG_NAMES)], ax.legend()),
                               "normal force [N]"),
    }
    for fname, (draw, ylabel) in panels.items():
        fig, ax = plt.subplots(figsize=(7, 3.5))
        draw(ax)
        ax.set_xlabel("t [s]")
        ax.set_ylabel(ylabel)
        fig.tight_layout()
        fig.savefig(out / fname, dpi=100)
        plt.close(fig)
        print(out / fname)
    return EXIT_OK


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="quadsim", description="Spined quadruped full-dynamics simulator.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--robot", help="robot config file (INI); default: built-in robot")
        sp.add_argument("--mu", type=float, help="override the friction coefficient")
        sp.add_argument("--seed", type=int, default=0,
                        help="random seed; only benchmark draws random states")

    s = sub.add_parser("simulate", help="run one or more scenarios and write the trajectory log")
    common(s)
    s.add_argument("--scenario", action="append",
                   help="scenario file (INI); repeat to run several; default: drop test")
    s.add_argument("--duration", type=float, help="simulated time [s]")
    s.add_argument("--h", type=float, help="time step [s]")
    s.add_argument("--out", help="output file (one scenario) or directory (several)")
    s.add_argument("--format", choices=("csv", "json"), default="csv", help="log format")
    s.add_argument("--jobs", type=int, default=1, help="parallel processes for several scenarios")
    s.add_argument("--no-stabilization", action="store_true",
                   help="disable penetration correction")
    s.set_defaults(func=cmd_simulate)

    b = sub.add_parser("benchmark", help="time M, C, G and J_C evaluations")
    common(b)
    b.add_argument("-n", type=int, default=1000, help="evaluations per term")
    b.add_argument("--format", choices=("table", "csv", "json"), default="table",
                   help="report format")
    b.add_argument("--out", help="also write the report here")
    b.add_argument("--reference", action="store_true",
                   help="add a row for the finite-difference Coriolis path")
    b.set_defaults(func=cmd_benchmark)

    i = sub.add_parser("inspect", help="print a kinematic/dynamic snapshot at q")
    common(i)
    i.add_argument("--q", help="20 comma-separated coordinates; default zero")
    i.add_argument("--q-file", help="file holding the 20 coordinates")
    i.add_argument("--json", action="store_true", help="machine-readable output")
    i.set_defaults(func=cmd_inspect)

    pl = sub.add_parser("plot", help="write PNG plots from a trajectory CSV")
    pl.add_argument("csv", help="trajectory log written by simulate")
    pl.add_argument("--out", help="output directory")
    pl.set_defaults(func=cmd_plot)
    return p


def _setup_logging() -> None:
    name = os.environ.get("QUADSIM_LOG", "WARNING").strip().upper()
    level = getattr(logging, name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(format="%(levelname)s %(name)s: %(message)s")
    logger.setLevel(level)


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
