"""Time stepping: semi-implicit Euler on the discrete dynamics with contact impulses.

One step evaluates M, C, G and J_C at q_k, solves the contact problem for the
active feet and applies

    qdot_{k+1} = qdot_k + M^-1 h (S^T tau - C - G) + M^-1 J_C^T lam
    q_{k+1}    = q_k + h qdot_{k+1}
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .contact import (
    ActiveContactSet,
    ContactSolution,
    ContactSolver,
    build_contact_problem,
    detect_contacts,
    stabilization_offset,
)
from .dynamics import dynamics_terms
from .kinematics import forward_kinematics
from .model import LEG_NAMES, N_DOF, N_JOINTS, RobotModel

logger = logging.getLogger(__name__)

DEFAULT_H = 1e-3
# Stance used by the built-in PD hold: hip flexion/extension and knee angles.
STANCE_HIP_FE = -0.8
STANCE_KNEE = 1.6
DEFAULT_KP = 300.0
DEFAULT_KD = 3.0
DEFAULT_TORQUE_LIMIT = 150.0


class SimulationError(RuntimeError):
    """A step failed; ``time`` is the simulation time at which it happened."""

    def __init__(self, message: str, time: float):
        super().__init__(f"t={time:.6g} s: {message}")
        self.time = time


@dataclass
class RobotState:
    q: np.ndarray
    qdot: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.q = np.array(self.q, dtype=float).reshape(-1)
        self.qdot = np.array(self.qdot, dtype=float).reshape(-1)
        if self.q.shape != (N_DOF,) or self.qdot.shape != (N_DOF,):
            raise ValueError(f"q and qdot must have length {N_DOF}")
        if not (np.all(np.isfinite(self.q)) and np.all(np.isfinite(self.qdot))):
            raise ValueError("state has non-finite entries")


@dataclass
class StepInfo:
    contacts: ActiveContactSet
    solution: ContactSolution | None
    lam: np.ndarray        # 4x3 per-foot impulses [n, t1, t2], zero for inactive feet
    tau: np.ndarray
    K: float
    P: float

    @property
    def active(self) -> np.ndarray:
        a = np.zeros(len(LEG_NAMES), dtype=bool)
        a[list(self.contacts.feet)] = True
        return a


def _advance(model: RobotModel, state: RobotState, tau, h: float,
             solver: ContactSolver | None, stabilization: bool, mu: float | None):
    if not h > 0:
        raise ValueError(f"step h must be > 0, got {h}")
    tau = np.asarray(tau, dtype=float)
    if tau.shape != (N_JOINTS,):
        raise ValueError(f"tau must have length {N_JOINTS}")
    mu = model.mu if mu is None else mu
    q, qdot = state.q, state.qdot
    terms = dynamics_terms(model, q, qdot)
    K = 0.5 * float(qdot @ terms.M @ qdot)
    P = model.gravity * float(terms.frames.com[:, 2] @ terms.frames.tree.link_mass)

    vc = (terms.J_C @ qdot).reshape(-1, 3)
    foot_vel = vc[:, [1, 2, 0]]   # contact rows are [n, t1, t2] = world [z, x, y]
    contacts = detect_contacts(model, terms.frames, foot_velocities=foot_vel, h=h)
    lam_feet = np.zeros((len(LEG_NAMES), 3))
    solution = None
    if len(contacts) == 0:
        if solver is not None:
            solver.reset()
        problem = build_contact_problem(terms.M, terms.C, terms.G, np.zeros((0, N_DOF)),
                                        qdot, tau, h, mu, S=terms.S)
        qdot_new = problem.free_velocity
    else:
        rows = np.concatenate([np.arange(3 * k, 3 * k + 3) for k in contacts.feet])
        problem = build_contact_problem(
            terms.M, terms.C, terms.G, terms.J_C[rows], qdot, tau, h, mu,
            normal_offset=stabilization_offset(contacts, h, enabled=stabilization), S=terms.S)
        if solver is None:
            solver = ContactSolver(warm_start=False)
        solution = solver.solve(problem, contacts.feet)
        qdot_new = problem.free_velocity + problem.Minv_Jt @ solution.lam
        lam_feet[list(contacts.feet)] = solution.lam.reshape(-1, 3)
    q_new = q + h * qdot_new
    if not (np.all(np.isfinite(q_new)) and np.all(np.isfinite(qdot_new))):
        raise FloatingPointError("non-finite state after step")
    info = StepInfo(contacts, solution, lam_feet, tau, K, P)
    return RobotState(q_new, qdot_new, state.time + h), info


def step(model: RobotModel, state: RobotState, tau, h: float = DEFAULT_H, *,
         solver: ContactSolver | None = None, stabilization: bool = True,
         mu: float | None = None) -> RobotState:
    """Advance one step of length h.

    Pass a persistent ``solver`` to warm-start the contact solve across steps.

    Raises:
        SingularityError: base pitch at +-pi/2.
    """
    return _advance(model, state, tau, h, solver, stabilization, mu)[0]


def step_with_info(model: RobotModel, state: RobotState, tau, h: float = DEFAULT_H, *,
                   solver: ContactSolver | None = None, stabilization: bool = True,
                   mu: float | None = None) -> tuple[RobotState, StepInfo]:
    """Like :func:`step` but also returns contact impulses and energies at q_k."""
    return _advance(model, state, tau, h, solver, stabilization, mu)


def pd_torques(state: RobotState, q_ref, kp: float, kd: float,
               limit: float = DEFAULT_TORQUE_LIMIT) -> np.ndarray:
    """tau_j = kp (q_ref_j - q_j) - kd qdot_j on the 14 joints, clipped to +-limit.

    ``q_ref`` is either the 14 joint targets or a full 20-vector.
    """
    if kp < 0 or kd < 0:
        raise ValueError("gains must be >= 0")
    q_ref = np.asarray(q_ref, dtype=float)
    if q_ref.shape == (N_DOF,):
        q_ref = q_ref[N_DOF - N_JOINTS:]
    tau = kp * (q_ref - state.q[N_DOF - N_JOINTS:]) - kd * state.qdot[N_DOF - N_JOINTS:]
    return np.clip(tau, -limit, limit)


def stance_joints(model: RobotModel) -> np.ndarray:
    """Joint targets of the default standing posture (spine straight)."""
    qj = np.zeros(N_JOINTS)
    for leg in model.legs:
        hip_fe = leg.dh[1].joint_index
        knee = leg.dh[2].joint_index
        qj[hip_fe] = STANCE_HIP_FE
        qj[knee] = STANCE_KNEE
    return qj


def default_stance(model: RobotModel, height: float | None = None) -> np.ndarray:
    """Full q in the stance posture; by default the base sits so the lowest foot touches z = 0."""
    q = np.zeros(N_DOF)
    q[N_DOF - N_JOINTS:] = stance_joints(model)
    if height is None:
        height = -float(np.min(forward_kinematics(model, q).feet[:, 2]))
    q[2] = height
    return q


# --------------------------------------------------------------------------
# Torque sources
# --------------------------------------------------------------------------

TorqueSource = Callable[[float, RobotState], np.ndarray]


def zero_torque(t: float, state: RobotState) -> np.ndarray:
    return np.zeros(N_JOINTS)


@dataclass
class PDTorque:
    q_ref: np.ndarray
    kp: float = DEFAULT_KP
    kd: float = DEFAULT_KD
    limit: float = DEFAULT_TORQUE_LIMIT

    def __call__(self, t: float, state: RobotState) -> np.ndarray:
        return pd_torques(state, self.q_ref, self.kp, self.kd, self.limit)


@dataclass
class ProfileTorque:
    """Zero-order hold over a table of (time, 14 torques); before the first row, the first row."""
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float).reshape(len(self.times), -1)
        if self.values.shape[1] != N_JOINTS:
            raise ValueError(f"profile needs {N_JOINTS} torque columns")
        if len(self.times) == 0 or np.any(np.diff(self.times) <= 0):
            raise ValueError("profile times must be non-empty and strictly increasing")

    def __call__(self, t: float, state: RobotState) -> np.ndarray:
        i = max(int(np.searchsorted(self.times, t + 1e-12, side="right")) - 1, 0)
        return self.values[i].copy()

    @classmethod
    def from_csv(cls, path) -> "ProfileTorque":
        """CSV with a header row; first column time, then tau0..tau13."""
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 0], data[:, 1:])


# --------------------------------------------------------------------------
# Logging
# --------------------------------------------------------------------------

def log_columns() -> list[str]:
    cols = ["t"]
    cols += [f"q{i}" for i in range(N_DOF)]
    cols += [f"qd{i}" for i in range(N_DOF)]
    cols += [f"tau{i}" for i in range(N_JOINTS)]
    for leg in LEG_NAMES:
        cols += [f"{leg}_active", f"{leg}_lamN", f"{leg}_lamT1", f"{leg}_lamT2"]
    cols += ["K", "P", "solver_iters", "solver_residual"]
    return cols


@dataclass
class TrajectoryLog:
    """Sampled trajectory. Row k holds the state at t_k together with the torque,
    contact impulses and solver diagnostics of the step taken from t_k.
    The last row of a finished run has no step after it: its impulses are zero.
    """
    t: list = field(default_factory=list)
    q: list = field(default_factory=list)
    qdot: list = field(default_factory=list)
    tau: list = field(default_factory=list)
    active: list = field(default_factory=list)
    lam: list = field(default_factory=list)
    K: list = field(default_factory=list)
    P: list = field(default_factory=list)
    solver_iters: list = field(default_factory=list)
    solver_residual: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.t)

    def append(self, state: RobotState, info: StepInfo) -> None:
        if self.t and not state.time > self.t[-1]:
            raise ValueError("log timestamps must be strictly increasing")
        sol = info.solution
        self.t.append(float(state.time))
        self.q.append(state.q.copy())
        self.qdot.append(state.qdot.copy())
        self.tau.append(np.array(info.tau, dtype=float))
        self.active.append(info.active)
        self.lam.append(info.lam.copy())
        self.K.append(info.K)
        self.P.append(info.P)
        self.solver_iters.append(0 if sol is None else sol.iterations)
        self.solver_residual.append(0.0 if sol is None else sol.residual_norm)

    def as_array(self) -> np.ndarray:
        n = len(self)
        out = np.empty((n, len(log_columns())))
        out[:, 0] = self.t
        out[:, 1:21] = np.reshape(self.q, (n, N_DOF))
        out[:, 21:41] = np.reshape(self.qdot, (n, N_DOF))
        out[:, 41:55] = np.reshape(self.tau, (n, N_JOINTS))
        feet = np.concatenate([np.reshape(self.active, (n, 4, 1)).astype(float),
                               np.reshape(self.lam, (n, 4, 3))], axis=2)
        out[:, 55:71] = feet.reshape(n, 16)
        out[:, 71] = self.K
        out[:, 72] = self.P
        out[:, 73] = self.solver_iters
        out[:, 74] = self.solver_residual
        return out

    def to_csv(self, dest=None) -> str | None:
        """Write CSV to a path; with no destination return the CSV text."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(log_columns())
        for row in self.as_array():
            w.writerow([repr(float(v)) for v in row])
        text = buf.getvalue()
        if dest is None:
            return text
        Path(dest).write_text(text)
        return None

    @classmethod
    def from_csv(cls, src) -> "TrajectoryLog":
        text = Path(src).read_text() if not isinstance(src, io.StringIO) else src.getvalue()
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0] != log_columns():
            raise ValueError("CSV header does not match the trajectory log schema")
        data = np.array(rows[1:], dtype=float).reshape(-1, len(log_columns()))
        log = cls()
        for r in data:
            log.t.append(float(r[0]))
            log.q.append(r[1:21].copy())
            log.qdot.append(r[21:41].copy())
            log.tau.append(r[41:55].copy())
            feet = r[55:71].reshape(4, 4)
            log.active.append(feet[:, 0] > 0.5)
            log.lam.append(feet[:, 1:].copy())
            log.K.append(float(r[71]))
            log.P.append(float(r[72]))
            log.solver_iters.append(int(r[73]))
            log.solver_residual.append(float(r[74]))
        return log

    # convenience views
    def times(self) -> np.ndarray:
        return np.asarray(self.t)

    def positions(self) -> np.ndarray:
        return np.reshape(self.q, (len(self), N_DOF))

    def velocities(self) -> np.ndarray:
        return np.reshape(self.qdot, (len(self), N_DOF))

    def impulses(self) -> np.ndarray:
        return np.reshape(self.lam, (len(self), 4, 3))

    def energy(self) -> np.ndarray:
        return np.asarray(self.K) + np.asarray(self.P)


# --------------------------------------------------------------------------
# Scenarios
# --------------------------------------------------------------------------

@dataclass
class Scenario:
    q0: np.ndarray
    qdot0: np.ndarray | None = None
    duration: float = 1.0
    h: float = DEFAULT_H
    torque: TorqueSource = zero_torque
    stabilization: bool = True
    log_stride: int = 1
    mu: float | None = None
    warm_start: bool = True

    def __post_init__(self):
        if not self.duration >= 0:
            raise ValueError(f"duration must be >= 0, got {self.duration}")
        if not self.h > 0:
            raise ValueError(f"step h must be > 0, got {self.h}")
        if self.log_stride < 1:
            raise ValueError("log stride must be >= 1")
        if self.qdot0 is None:
            self.qdot0 = np.zeros(N_DOF)

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.h))


def drop_scenario(model: RobotModel, height: float = 0.3, duration: float = 3.0,
                  h: float = DEFAULT_H, kp: float = DEFAULT_KP, kd: float = DEFAULT_KD) -> Scenario:
    """Default stance released at rest with the base at ``height``, PD holding the stance."""
    q0 = default_stance(model, height)
    return Scenario(q0=q0, duration=duration, h=h,
                    torque=PDTorque(q0[N_DOF - N_JOINTS:].copy(), kp, kd))


def run(model: RobotModel, scenario: Scenario, csv_path=None) -> TrajectoryLog:
    """Integrate a scenario; returns the log (and writes it to ``csv_path`` if given).

    Raises:
        SimulationError: wrapping the failure of any step, with its time.
    """
    state = RobotState(scenario.q0, scenario.qdot0, 0.0)
    solver = ContactSolver(warm_start=scenario.warm_start)
    log = TrajectoryLog()
    n = scenario.n_steps
    for k in range(n):
        state_t = RobotState(state.q, state.qdot, k * scenario.h)
        try:
            tau = scenario.torque(state_t.time, state_t)
            new, info = _advance(model, state_t, tau, scenario.h, solver,
                                 scenario.stabilization, scenario.mu)
        except Exception as exc:
            raise SimulationError(str(exc), state_t.time) from exc
        if info.solution is not None and not info.solution.converged:
            logger.info("t=%.4f: contact solve residual %.3g", state_t.time,
                        info.solution.residual_norm)
        if k % scenario.log_stride == 0:
            log.append(state_t, info)
        state = new
    # final sample: energies and contact set at the end state, no step taken
    final = RobotState(state.q, state.qdot, n * scenario.h)
    try:
        terms = dynamics_terms(model, final.q, final.qdot)
    except Exception as exc:
        raise SimulationError(str(exc), final.time) from exc
    contacts = detect_contacts(model, terms.frames)
    K = 0.5 * float(final.qdot @ terms.M @ final.qdot)
    P = model.gravity * float(terms.frames.com[:, 2] @ terms.frames.tree.link_mass)
    tau = scenario.torque(final.time, final)
    if not log.t or final.time > log.t[-1]:
        log.append(final, StepInfo(contacts, None, np.zeros((len(LEG_NAMES), 3)), tau, K, P))
    if csv_path is not None:
        log.to_csv(csv_path)
    return log


def summarize(model: RobotModel, log: TrajectoryLog) -> dict:
    """Headline numbers for a finished run."""
    q = log.positions()
    E = log.energy()
    frames = forward_kinematics(model, q)
    min_foot = float(np.min(frames.feet[..., 2])) if len(log) else math.nan
    iters = np.asarray(log.solver_iters)
    res = np.asarray(log.solver_residual)
    return {
        "duration": float(log.t[-1] - log.t[0]) if len(log) else 0.0,
        "samples": len(log),
        "final_q": q[-1].tolist() if len(log) else [],
        "final_base_height": float(q[-1, 2]) if len(log) else math.nan,
        "energy_drift": float(E[-1] - E[0]) if len(log) else 0.0,
        "max_penetration": max(0.0, -min_foot) if len(log) else 0.0,
        "solver_mean_iters": float(iters[iters > 0].mean()) if np.any(iters > 0) else 0.0,
        "solver_max_residual": float(res.max()) if len(log) else 0.0,
    }
