"""Euler-Lagrange terms of the floating-base model: M(q), C(q, qdot), G(q), S.

Two Coriolis paths are provided. ``method="reference"`` evaluates the
Christoffel sum over central finite differences of M; ``method="analytic"``
(the default, used by the simulator) propagates bias accelerations down the
kinematic tree and projects the per-link Newton-Euler bias wrenches through
the link Jacobians. Both give the same vector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .kinematics import (
    CONTACT_AXES,
    FrameSet,
    cross,
    euler_rate_map,
    forward_kinematics,
    point_jacobian_columns,
    skew,
    _check_pitch,
)
from .model import LinkParams, N_BASE, N_DOF, N_JOINTS, RobotModel

FD_STEP = 1e-6


@dataclass(frozen=True)
class SpatialInertia:
    mass: float
    inertia: np.ndarray   # world-frame 3x3 rotational inertia about the COM
    matrix: np.ndarray    # 6x6 blockdiag(m I3, inertia)


@dataclass
class DynamicsTerms:
    M: np.ndarray
    C: np.ndarray
    G: np.ndarray
    S: np.ndarray
    J_C: np.ndarray
    frames: FrameSet | None = None


def box_inertia_tensor(p: LinkParams) -> np.ndarray:
    l, w, h = p.box
    return np.diag([p.mass / 12.0 * (w * w + h * h),
                    p.mass / 12.0 * (l * l + h * h),
                    p.mass / 12.0 * (l * l + w * w)])


def link_spatial_inertia(link_params: LinkParams, world_rotation) -> SpatialInertia:
    """Box inertia rotated into the world frame and the 6x6 generalized inertia."""
    R = np.asarray(world_rotation, dtype=float)
    I = R @ box_inertia_tensor(link_params) @ R.T
    mat = np.zeros((6, 6))
    mat[0, 0] = mat[1, 1] = mat[2, 2] = link_params.mass
    mat[3:, 3:] = I
    return SpatialInertia(link_params.mass, I, mat)


def selection_matrix() -> np.ndarray:
    """S = [0 | I] mapping the 14 joint torques into generalized forces (via S^T)."""
    return np.hstack([np.zeros((N_JOINTS, N_BASE)), np.eye(N_JOINTS)])


def _link_jacobians(frames: FrameSet, W: np.ndarray):
    """Per-link ``(cols, J)`` pairs restricted to structurally nonzero columns."""
    tree = frames.tree
    out = []
    for i in range(tree.n_links):
        out.append(point_jacobian_columns(frames, int(tree.link_frame[i]), frames.com[i], W))
    return out


def _world_inertias(frames: FrameSet) -> np.ndarray:
    tree = frames.tree
    R = frames.rot[tree.link_frame]
    return np.einsum("lij,lj,lkj->lik", R, tree.link_inertia, R)


def _prepare(model: RobotModel, q):
    # M, C, G and all Jacobians are independent of the base position, so the
    # kinematics is evaluated with the base at the origin. This keeps lever
    # arms free of cancellation when the robot is far from the world origin.
    q = np.asarray(q, dtype=float)
    _check_pitch(q[4])
    q_local = q.copy()
    q_local[:3] = 0.0
    frames = forward_kinematics(model, q_local)
    W = frames.rot[0] @ euler_rate_map(q[4], q[5])
    return q, frames, W


def _accumulate_mass(frames, jacs, inertias) -> np.ndarray:
    M = np.zeros((N_DOF, N_DOF))
    masses = frames.tree.link_mass
    for (cols, J), m, I in zip(jacs, masses, inertias):
        Jv, Jw = J[:3], J[3:]
        M[np.ix_(cols, cols)] += m * (Jv.T @ Jv) + Jw.T @ I @ Jw
    return M


def mass_matrix(model: RobotModel, q, method: str = "sparse") -> np.ndarray:
    """20x20 generalized inertia, sum of J_i^T M_i J_i over all massed links.

    ``method="sparse"`` accumulates only structurally nonzero Jacobian
    columns; ``method="dense"`` forms full 6x20 Jacobians and 6x6 link inertias.

    Raises:
        SingularityError: near base pitch +-pi/2.
    """
    q, frames, W = _prepare(model, q)
    if method == "sparse":
        return _accumulate_mass(frames, _link_jacobians(frames, W), _world_inertias(frames))
    if method != "dense":
        raise ValueError(f"unknown method {method!r}")
    M = np.zeros((N_DOF, N_DOF))
    for i, (_, params) in enumerate(model.links()):
        cols, Jsub = point_jacobian_columns(frames, int(frames.tree.link_frame[i]),
                                            frames.com[i], W)
        J = np.zeros((6, N_DOF))
        J[:, cols] = Jsub
        sp = link_spatial_inertia(params, frames.link_rotation(i))
        M += J.T @ sp.matrix @ J
    return M


def _gravity(frames, jacs, g: float) -> np.ndarray:
    G = np.zeros(N_DOF)
    for (cols, J), m in zip(jacs, frames.tree.link_mass):
        G[cols] += m * g * J[2]
    return G


def gravity_vector(model: RobotModel, q) -> np.ndarray:
    """G = dP/dq, assembled as sum of J_lin^T (m_i g e_z)."""
    q, frames, W = _prepare(model, q)
    return _gravity(frames, _link_jacobians(frames, W), model.gravity)


def potential_energy(model: RobotModel, q) -> float | np.ndarray:
    """P = sum m_i g z_i; accepts batched ``q``."""
    frames = forward_kinematics(model, q)
    return model.gravity * (frames.com[..., 2] @ frames.tree.link_mass)


def _euler_rate_map_dot(theta, psi, theta_dot, psi_dot) -> np.ndarray:
    ct, st = math.cos(theta), math.sin(theta)
    cp, sp = math.cos(psi), math.sin(psi)
    dE_dtheta = np.array([[-st * cp, 0.0, 0.0], [st * sp, 0.0, 0.0], [ct, 0.0, 0.0]])
    dE_dpsi = np.array([[-ct * sp, cp, 0.0], [-ct * cp, -sp, 0.0], [0.0, 0.0, 0.0]])
    return theta_dot * dE_dtheta + psi_dot * dE_dpsi


def _cross3(a, b):
    return (a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0])


def _bias_kinematics(frames: FrameSet, W: np.ndarray, qdot: np.ndarray):
    """Angular velocity and q_ddot = 0 bias accelerations of every frame.

    Scalar arithmetic on purpose: the recursion is over ~20 tiny vectors.
    """
    tree = frames.tree
    q = frames.q
    n = tree.n_frames
    omega = [None] * n
    alpha = [None] * n
    acc = [None] * n
    omega[0] = tuple(W @ qdot[3:6])
    alpha[0] = tuple(frames.rot[0] @ (_euler_rate_map_dot(q[4], q[5], qdot[4], qdot[5])
                                      @ qdot[3:6]))
    acc[0] = (0.0, 0.0, 0.0)
    parent, joint_q = tree.parent.tolist(), tree.joint_q.tolist()
    pos = frames.pos.tolist()
    axes = frames.rot[:, :, 2].tolist()
    qd = qdot.tolist()
    for f in range(1, n):
        p = parent[f]
        w_p, al_p, a_p = omega[p], alpha[p], acc[p]
        pf, pp = pos[f], pos[p]
        d = (pf[0] - pp[0], pf[1] - pp[1], pf[2] - pp[2])
        t1 = _cross3(al_p, d)
        t2 = _cross3(w_p, _cross3(w_p, d))
        acc[f] = (a_p[0] + t1[0] + t2[0], a_p[1] + t1[1] + t2[1], a_p[2] + t1[2] + t2[2])
        j = joint_q[f]
        if j >= 0:
            z = axes[f]
            rate = qd[j]
            omega[f] = (w_p[0] + z[0] * rate, w_p[1] + z[1] * rate, w_p[2] + z[2] * rate)
            wz = _cross3(w_p, z)
            alpha[f] = (al_p[0] + wz[0] * rate, al_p[1] + wz[1] * rate, al_p[2] + wz[2] * rate)
        else:
            omega[f] = w_p
            alpha[f] = al_p
    return np.array(omega), np.array(alpha), np.array(acc)


def _coriolis_analytic(frames, W, qdot, jacs, inertias) -> np.ndarray:
    tree = frames.tree
    omega, alpha, acc = _bias_kinematics(frames, W, qdot)
    lf = tree.link_frame
    r = frames.com - frames.pos[lf]
    w, a = omega[lf], alpha[lf]
    a_com = acc[lf] + cross(a, r) + cross(w, cross(w, r))
    Iw = np.einsum("lij,lj->li", inertias, w)
    Ia = np.einsum("lij,lj->li", inertias, a)
    torque = Ia + cross(w, Iw)
    force = tree.link_mass[:, None] * a_com
    C = np.zeros(N_DOF)
    for (cols, J), f_i, t_i in zip(jacs, force, torque):
        C[cols] += J[:3].T @ f_i + J[3:].T @ t_i
    return C


def _frame_velocities(frames: FrameSet, W: np.ndarray, v: np.ndarray):
    """World angular velocity and origin velocity of every frame for rates ``v``."""
    tree = frames.tree
    n = tree.n_frames
    omega = np.zeros((n, 3))
    vel = np.zeros((n, 3))
    omega[0] = W @ v[3:6]
    vel[0] = v[:3]
    axes = frames.rot[:, :, 2]
    for f in range(1, n):
        p = tree.parent[f]
        vel[f] = vel[p] + np.cross(omega[p], frames.pos[f] - frames.pos[p])
        omega[f] = omega[p]
        j = tree.joint_q[f]
        if j >= 0:
            omega[f] = omega[f] + axes[f] * v[j]
    return omega, vel


def _point_jacobian_dot(frames, frame, point, W, Wdot, omega, vel):
    """Time derivative of :func:`point_jacobian_columns` along the motion."""
    tree = frames.tree
    path_f = list(tree.frame_path_frames[frame])
    pdot = vel[frame] + np.cross(omega[frame], point - frames.pos[frame])
    Jd = np.zeros((6, N_BASE + len(path_f)))
    r = point - frames.pos[0]
    rdot = pdot - vel[0]
    Jd[0:3, 3:6] = (cross(Wdot.T, r) + cross(W.T, rdot)).T
    Jd[3:6, 3:6] = Wdot
    if path_f:
        z = frames.rot[path_f, :, 2]
        zdot = cross(omega[path_f], z)
        d = point - frames.pos[path_f]
        ddot = pdot - vel[path_f]
        Jd[0:3, N_BASE:] = (cross(zdot, d) + cross(z, ddot)).T
        Jd[3:6, N_BASE:] = zdot.T
    return Jd


def mass_matrix_dot(model: RobotModel, q, v) -> np.ndarray:
    """dM/dt along qdot = v, from analytic Jacobian time derivatives."""
    q, frames, W = _prepare(model, q)
    v = np.asarray(v, dtype=float)
    tree = frames.tree
    # W = R E: Wdot = [w]x R E + R Edot
    w0 = W @ v[3:6]
    Wdot = np.cross(w0, W.T).T + frames.rot[0] @ _euler_rate_map_dot(q[4], q[5], v[4], v[5])
    omega, vel = _frame_velocities(frames, W, v)
    inertias = _world_inertias(frames)
    Md = np.zeros((N_DOF, N_DOF))
    for i in range(tree.n_links):
        f = int(tree.link_frame[i])
        cols, J = point_jacobian_columns(frames, f, frames.com[i], W)
        Jd = _point_jacobian_dot(frames, f, frames.com[i], W, Wdot, omega, vel)
        I = inertias[i]
        Sw = skew(omega[f])
        Idot = Sw @ I - I @ Sw
        Jv, Jw, Jvd, Jwd = J[:3], J[3:], Jd[:3], Jd[3:]
        m = tree.link_mass[i]
        blk = m * (Jvd.T @ Jv + Jv.T @ Jvd) + Jwd.T @ I @ Jw + Jw.T @ I @ Jwd + Jw.T @ Idot @ Jw
        Md[np.ix_(cols, cols)] += blk
    return Md


def mass_matrix_derivatives(model: RobotModel, q, step: float = FD_STEP,
                            method: str = "fd") -> np.ndarray:
    """dM/dq; ``out[k]`` is dM/dq_k.

    ``method="fd"``: central differences with ``step``. ``method="analytic"``:
    :func:`mass_matrix_dot` along each unit direction.
    """
    q = np.asarray(q, dtype=float)
    dM = np.zeros((N_DOF, N_DOF, N_DOF))
    # M does not depend on the base position
    for k in range(3, N_DOF):
        e = np.zeros(N_DOF)
        if method == "analytic":
            e[k] = 1.0
            dM[k] = mass_matrix_dot(model, q, e)
        elif method == "fd":
            e[k] = step
            dM[k] = (mass_matrix(model, q + e) - mass_matrix(model, q - e)) / (2 * step)
        else:
            raise ValueError(f"unknown method {method!r}")
    return dM


def christoffel_matrix(model: RobotModel, q, qdot, dM: np.ndarray | None = None,
                       method: str = "analytic") -> np.ndarray:
    """C_mat with C_mat @ qdot = C, built from symmetric Christoffel symbols.

    dM/dq comes from ``dM`` if given, else from :func:`mass_matrix_derivatives`
    with ``method``. With this construction qdot^T (Mdot - 2 C_mat) qdot = 0.
    """
    qdot = np.asarray(qdot, dtype=float)
    if dM is None:
        dM = mass_matrix_derivatives(model, q, method=method)
    # dM[k, i, j] = dM_ij / dq_k
    t1 = np.einsum("kij,k->ij", dM, qdot)         # sum_k dM_ij/dq_k qdot_k
    t2 = np.einsum("jik,k->ij", dM, qdot)         # sum_k dM_ik/dq_j qdot_k
    t3 = np.einsum("ijk,k->ij", dM, qdot)         # sum_k dM_jk/dq_i qdot_k
    return 0.5 * (t1 + t2 - t3)


def coriolis_vector(model: RobotModel, q, qdot, method: str = "analytic") -> np.ndarray:
    """Coriolis/centrifugal generalized force C(q, qdot).

    ``method="reference"``: ``C_i = sum_jk (dM_ij/dq_k - 1/2 dM_kj/dq_i) qdot_j qdot_k``
    with dM/dq from central differences (step 1e-6).
    ``method="analytic"``: recursive bias accelerations, no differencing.
    """
    qdot = np.asarray(qdot, dtype=float)
    if method == "reference":
        dM = mass_matrix_derivatives(model, q)
        Mdot = np.einsum("kij,k->ij", dM, qdot)
        quad = np.einsum("ikj,k,j->i", dM, qdot, qdot)
        return Mdot @ qdot - 0.5 * quad
    if method != "analytic":
        raise ValueError(f"unknown method {method!r}")
    q, frames, W = _prepare(model, q)
    jacs = _link_jacobians(frames, W)
    return _coriolis_analytic(frames, W, qdot, jacs, _world_inertias(frames))


def kinetic_energy(model: RobotModel, q, qdot) -> float:
    M = mass_matrix(model, q)
    qdot = np.asarray(qdot, dtype=float)
    return 0.5 * float(qdot @ M @ qdot)


def total_energy(model: RobotModel, q, qdot) -> tuple[float, float]:
    """(K, P): K = 1/2 qdot^T M qdot, P = sum m_i g h_i."""
    return kinetic_energy(model, q, qdot), float(potential_energy(model, q))


def dynamics_terms(model: RobotModel, q, qdot) -> DynamicsTerms:
    """M, C (analytic), G, S and the 12x20 contact Jacobian from a single FK pass."""
    q, frames, W = _prepare(model, q)
    qdot = np.asarray(qdot, dtype=float)
    jacs = _link_jacobians(frames, W)
    inertias = _world_inertias(frames)
    M = _accumulate_mass(frames, jacs, inertias)
    G = _gravity(frames, jacs, model.gravity)
    C = _coriolis_analytic(frames, W, qdot, jacs, inertias)
    tree = frames.tree
    J_C = np.zeros((3 * len(tree.foot_frame), N_DOF))
    for k, frame in enumerate(tree.foot_frame):
        cols, Jsub = point_jacobian_columns(frames, int(frame), frames.feet[k], W)
        J_C[3 * k:3 * k + 3, cols] = Jsub[list(CONTACT_AXES)]
    offset = q[:3]
    world = replace(frames, q=q, pos=frames.pos + offset, com=frames.com + offset,
                    feet=frames.feet + offset)
    return DynamicsTerms(M=M, C=C, G=G, S=selection_matrix(), J_C=J_C, frames=world)

