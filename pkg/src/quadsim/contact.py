"""Ground contact detection and the discrete-time friction-cone impulse solve.

Per active contact the unknowns are packed in a decision vector
``x = (x_N, x_T1, x_T2)`` from which impulse and post-step velocity follow::

    lam_N = max(0, -x_N)            V_N = max(0, x_N)
    s     = min(1, mu lam_N / |x_T|)   (s = 1 when |x_T| = 0)
    lam_T = -s x_T                  V_T = x_T - s x_T

so that ``V = lam + x`` always, and the complementarity and friction-cone
conditions hold by construction. The contact dynamics ``A lam + V0 = V`` then
reduce to the root of ``r(x) = A lam(x) + V0 - V(x)``, found by minimizing
``|r|^2`` with a damped Gauss-Newton iteration.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .kinematics import FrameSet

logger = logging.getLogger(__name__)

ACTIVATION_THRESHOLD = 1e-5
STABILIZATION_BETA = 0.2
STABILIZATION_MAX_SPEED = 0.1
TOLERANCE = 1e-10
MAX_ITERATIONS = 100


@dataclass(frozen=True)
class Contact:
    foot: int
    point: np.ndarray
    penetration: float  # > 0 below ground; speculative contacts may be negative


@dataclass(frozen=True)
class ActiveContactSet:
    contacts: tuple[Contact, ...] = ()

    @property
    def feet(self) -> tuple[int, ...]:
        return tuple(c.foot for c in self.contacts)

    def __len__(self) -> int:
        return len(self.contacts)

    def __iter__(self):
        return iter(self.contacts)


@dataclass
class ContactProblem:
    A: np.ndarray
    V0: np.ndarray
    mu: float
    h: float
    # helpers kept for the velocity update: unconstrained qdot_{k+1} and M^-1 J_C^T
    free_velocity: np.ndarray | None = None
    Minv_Jt: np.ndarray | None = None

    @property
    def n_contacts(self) -> int:
        return len(self.V0) // 3


@dataclass
class ContactSolution:
    x: np.ndarray
    lam: np.ndarray
    V: np.ndarray
    residual_norm: float
    iterations: int
    converged: bool
    slip: np.ndarray = field(default_factory=lambda: np.zeros(0))


def detect_contacts(model, frames: FrameSet, threshold: float = ACTIVATION_THRESHOLD,
                    foot_velocities=None, h: float | None = None) -> ActiveContactSet:
    """Feet at or below ``threshold`` above the ground plane z = 0, ordered FR, FL, HR, HL.

    With ``foot_velocities`` (4x3, world) and ``h`` also activates feet that
    would cross the threshold within one step; those carry a negative
    penetration (the remaining gap).
    """
    contacts = []
    for k, p in enumerate(frames.feet):
        z = float(p[2])
        active = z <= threshold
        if not active and foot_velocities is not None and h is not None:
            active = z + h * float(foot_velocities[k][2]) <= threshold
        if active:
            contacts.append(Contact(k, np.array(p, dtype=float), -z))
    return ActiveContactSet(tuple(contacts))


def stabilization_offset(contacts: ActiveContactSet, h: float, enabled: bool = True,
                         beta: float = STABILIZATION_BETA,
                         max_speed: float = STABILIZATION_MAX_SPEED) -> np.ndarray:
    """Per-contact shift added to the normal entries of V0.

    Penetrating feet get ``-min(beta/h * depth, max_speed)`` (pushed out);
    feet still above ground get ``+gap/h`` so they may close the gap but not
    cross it within the step. Disabled stabilization leaves penetration alone
    but still honours the gap.
    """
    off = np.zeros(3 * len(contacts))
    for i, c in enumerate(contacts):
        if c.penetration > 0:
            if enabled:
                off[3 * i] = -min(beta / h * c.penetration, max_speed)
        else:
            off[3 * i] = -c.penetration / h
    return off


def build_contact_problem(M, C, G, J_C_active, qdot, tau, h: float, mu: float,
                          normal_offset=None, S=None) -> ContactProblem:
    """Contact-space inverse inertia ``A = J M^-1 J^T`` and free velocity
    ``V0 = J (qdot + h M^-1 (S^T tau - C - G))``.

    Raises:
        numpy.linalg.LinAlgError: if M is not numerically positive definite.
    """
    if not h > 0:
        raise ValueError(f"step h must be > 0, got {h}")
    M = np.asarray(M, dtype=float)
    n = M.shape[0]
    tau = np.asarray(tau, dtype=float)
    if S is None:
        gen_tau = np.concatenate([np.zeros(n - len(tau)), tau])
    else:
        gen_tau = np.asarray(S).T @ tau
    try:
        factor = scipy.linalg.cho_factor(M)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"mass matrix not positive definite: {exc}") from None
    free = np.asarray(qdot, dtype=float) + h * scipy.linalg.cho_solve(factor, gen_tau - C - G)
    J = np.asarray(J_C_active, dtype=float).reshape(-1, n)
    if J.shape[0] == 0:
        return ContactProblem(np.zeros((0, 0)), np.zeros(0), mu, h, free, np.zeros((n, 0)))
    Minv_Jt = scipy.linalg.cho_solve(factor, J.T)
    A = J @ Minv_Jt
    A = 0.5 * (A + A.T)
    V0 = J @ free
    if normal_offset is not None:
        V0 = V0 + np.asarray(normal_offset, dtype=float)
    return ContactProblem(A, V0, mu, h, free, Minv_Jt)


def parameterize(x, mu: float):
    """Map decision vector x (3 per contact) to (lam, V, s)."""
    x = np.asarray(x, dtype=float).reshape(-1, 3)
    lam_n = np.maximum(0.0, -x[:, 0])
    xt = x[:, 1:]
    norm_t = np.sqrt((xt * xt).sum(axis=1))
    s = np.ones(len(x))
    nz = norm_t > 0
    s[nz] = np.minimum(1.0, mu * lam_n[nz] / norm_t[nz])
    lam = np.empty_like(x)
    lam[:, 0] = lam_n
    lam[:, 1:] = -s[:, None] * xt
    V = np.empty_like(x)
    V[:, 0] = np.maximum(0.0, x[:, 0])
    V[:, 1:] = xt + lam[:, 1:]
    return lam.ravel(), V.ravel(), s


def residual(x, problem: ContactProblem) -> np.ndarray:
    """r(x) = A lam(x) + V0 - V(x); zero exactly at a consistent contact state."""
    lam, V, _ = parameterize(x, problem.mu)
    return problem.A @ lam + problem.V0 - V


def _impulse_jacobian(x: np.ndarray, mu: float, flip_normal=None, flip_cone=None) -> np.ndarray:
    """Block-diagonal d lam / d x.

    At kinks (x_N = 0, or the cone boundary mu lam_N = |x_T|) this returns one
    element of the generalized Jacobian; ``flip_normal`` / ``flip_cone``
    (per-contact bool masks) select the element from the other side.
    """
    xs = x.reshape(-1, 3)
    D = np.zeros((len(x), len(x)))
    for i, (xn, t1, t2) in enumerate(xs):
        b = 3 * i
        lam_n = max(0.0, -xn)
        active = xn < 0
        if flip_normal is not None and flip_normal[i]:
            active = not active
        dn = -1.0 if active else 0.0
        D[b, b] = dn
        nt = float(np.hypot(t1, t2))
        stick = mu * lam_n >= nt if nt > 0 else lam_n > 0 or active
        if flip_cone is not None and flip_cone[i]:
            stick = not stick
        if stick or nt == 0.0:
            if stick:
                D[b + 1:b + 3, b + 1:b + 3] = -np.eye(2)
        else:
            n = np.array([t1, t2]) / nt
            D[b + 1:b + 3, b] = -mu * n * dn
            D[b + 1:b + 3, b + 1:b + 3] = -mu * lam_n / nt * (np.eye(2) - np.outer(n, n))
    return D


def _kinks(x: np.ndarray, mu: float, tol: float):
    """Per-contact masks of decision variables sitting on a kink."""
    xs = x.reshape(-1, 3)
    scale = tol * (1.0 + np.max(np.abs(x)))
    lam_n = np.maximum(0.0, -xs[:, 0])
    nt = np.hypot(xs[:, 1], xs[:, 2])
    return np.abs(xs[:, 0]) <= scale, np.abs(mu * lam_n - nt) <= scale


def _jacobian_candidates(x, mu, kink_tol):
    yield None, None
    on_n, on_c = _kinks(x, mu, kink_tol)
    if on_n.any():
        yield on_n, None
    if on_c.any():
        yield None, on_c
    if on_n.any() and on_c.any():
        yield on_n, on_c


def _line_search(x, dx, f, problem, tol):
    t = 1.0
    while t > 1e-6:
        xn = x + t * dx
        rn = residual(xn, problem)
        fn = 0.5 * rn @ rn
        if fn < f * (1 - 1e-4 * t) or fn < 0.5 * tol * tol:
            return xn, rn, fn
        t *= 0.5
    return None


def _gauss_newton(x, problem, tol, max_iter):
    n = len(x)
    mu = problem.mu
    AmI = problem.A - np.eye(n)
    eye = np.eye(n)
    r = residual(x, problem)
    f = 0.5 * r @ r
    damping = 0.0
    it = 0
    while it < max_iter and np.max(np.abs(r)) >= tol:
        it += 1
        step = None
        for flip_n, flip_c in _jacobian_candidates(x, mu, 1e-9):
            Jr = AmI @ _impulse_jacobian(x, mu, flip_n, flip_c) - eye
            g = Jr.T @ r
            H = Jr.T @ Jr
            # damped Gauss-Newton: (J^T J + damping I) dx = -J^T r
            for _ in range(6):
                try:
                    dx = np.linalg.solve(H + damping * eye, -g)
                except np.linalg.LinAlgError:
                    dx = np.linalg.lstsq(Jr, -r, rcond=None)[0]
                step = _line_search(x, dx, f, problem, tol)
                if step is not None:
                    damping = damping / 10 if damping > 1e-12 else 0.0
                    break
                damping = min(max(10 * damping, 1e-8 * (1.0 + np.trace(H) / n)), 1e8)
            if step is not None:
                break
        if step is None:
            # steepest descent on |r|^2 with backtracking
            Jr = AmI @ _impulse_jacobian(x, mu) - eye
            g = Jr.T @ r
            gn = g @ g
            t = f / gn if gn > 0 else 0.0
            while t > 1e-16:
                xn = x - t * g
                rn = residual(xn, problem)
                fn = 0.5 * rn @ rn
                if fn < f - 1e-4 * t * gn:
                    step = (xn, rn, fn)
                    break
                t *= 0.5
        if step is None:
            break  # stationary point of |r|^2 that is not a root
        x, r, f = step
    return x, r, it


def _starting_points(problem: ContactProblem, warm_start):
    n = len(problem.V0)
    if warm_start is not None:
        x = np.array(warm_start, dtype=float)
        if x.shape == (n,) and np.all(np.isfinite(x)):
            yield x
    yield np.zeros(n)
    # sticking guess: V = 0, lam = -A^-1 V0, with lam clipped into the cone
    try:
        lam = -np.linalg.solve(problem.A, problem.V0).reshape(-1, 3)
    except np.linalg.LinAlgError:
        lam = None
    if lam is not None:
        lam[:, 0] = np.maximum(lam[:, 0], 0.0)
        nt = np.hypot(lam[:, 1], lam[:, 2])
        cap = problem.mu * lam[:, 0]
        over = nt > cap
        lam[over, 1:] *= (cap[over] / nt[over])[:, None]
        yield -lam.ravel()
    rng = np.random.default_rng(12345)
    scale = 1.0 + np.max(np.abs(problem.V0)) / max(np.min(np.diag(problem.A)), 1e-12)
    for _ in range(8):
        yield rng.uniform(-scale, scale, n)


def solve_contact_impulses(problem: ContactProblem, warm_start=None, tol: float = TOLERANCE,
                           max_iter: int = MAX_ITERATIONS) -> ContactSolution:
    """Minimize |r(x)|^2 by damped Gauss-Newton with a gradient-descent fallback.

    If an attempt stalls at a non-root stationary point the solve restarts
    from the next of a fixed sequence of starting points (warm start, zero,
    cone-clipped sticking impulse, seeded random). ``max_iter`` bounds each
    attempt; ``iterations`` reports the total. The best iterate is returned
    and ``converged`` is ``max|r| < tol``.
    """
    n = len(problem.V0)
    if n == 0:
        return ContactSolution(np.zeros(0), np.zeros(0), np.zeros(0), 0.0, 0, True)
    best = None
    total = 0
    for x0 in _starting_points(problem, warm_start):
        x, r, it = _gauss_newton(x0, problem, tol, max_iter)
        total += it
        res_inf = float(np.max(np.abs(r)))
        if best is None or res_inf < best[1]:
            best = (x, res_inf)
        if res_inf < tol:
            break
    x, res_inf = best
    lam, V, s = parameterize(x, problem.mu)
    converged = res_inf < tol
    if not converged:
        logger.warning("contact solver did not converge: |r|inf=%.3g after %d iterations",
                       res_inf, total)
    return ContactSolution(x, lam, V, res_inf, total, converged, s)


class ContactSolver:
    """Stateful wrapper that warm-starts each solve from the previous one.

    The warm start is discarded whenever the active foot set changes. One
    instance belongs to one simulation; it is not thread-safe.
    """

    def __init__(self, tol: float = TOLERANCE, max_iter: int = MAX_ITERATIONS,
                 warm_start: bool = True):
        self.tol = tol
        self.max_iter = max_iter
        self.warm_start = warm_start
        self._feet: tuple[int, ...] | None = None
        self._x: np.ndarray | None = None

    def reset(self) -> None:
        self._feet = None
        self._x = None

    def solve(self, problem: ContactProblem, feet: tuple[int, ...]) -> ContactSolution:
        x0 = self._x if (self.warm_start and feet == self._feet) else None
        sol = solve_contact_impulses(problem, x0, tol=self.tol, max_iter=self.max_iter)
        self._feet = tuple(feet)
        self._x = sol.x.copy()
        return sol
