"""Forward kinematics, orientation mappings and Jacobians.

Velocity convention: the base-orientation block of ``qdot`` holds Euler-angle
rates ``(roll_dot, pitch_dot, yaw_dot)``, not angular velocity. Jacobians fold
in the rate-to-angular-velocity map so ``J @ qdot`` is a true world-frame
twist ``[v; w]``.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np

from .model import LEG_NAMES, N_BASE, N_DOF, RobotModel

SINGULARITY_EPS = 1e-6


class SingularityError(ArithmeticError):
    """Base pitch too close to +-pi/2 for the Euler-rate mapping."""


# --------------------------------------------------------------------------
# Elementary transforms
# --------------------------------------------------------------------------

def dh_transform(a: float, alpha: float, d: float, theta: float) -> np.ndarray:
    """Modified-DH transform from frame i to frame i+1 (a_i, alpha_i, d_i+1, theta_i+1)."""
    ct, st = math.cos(theta), math.sin(theta)
    ca, sa = math.cos(alpha), math.sin(alpha)
    return np.array([
        [ct, -st, 0.0, a],
        [st * ca, ct * ca, -sa, -sa * d],
        [st * sa, ct * sa, ca, ca * d],
        [0.0, 0.0, 0.0, 1.0],
    ])


def spine_transforms(theta_f: float, theta_h: float, L_b: float) -> tuple[np.ndarray, np.ndarray]:
    """Main body -> front body (pitch joint) and main body -> hind body (roll joint)."""
    cf, sf = math.cos(theta_f), math.sin(theta_f)
    ch, sh = math.cos(theta_h), math.sin(theta_h)
    front = np.array([
        [cf, -sf, 0.0, L_b / 2],
        [0.0, 0.0, -1.0, 0.0],
        [sf, cf, 0.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ])
    hind = np.array([
        [0.0, 0.0, 1.0, -L_b / 2],
        [sh, ch, 0.0, 0.0],
        [-ch, sh, 0.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ])
    return front, hind


def hip_transforms(geometry) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Constant body-segment -> hip transforms, ordered FR, FL, HR, HL."""
    Lf, Hf, Wf = geometry.front_length, geometry.front_height, geometry.front_width
    Lh, Hh, Wh = geometry.hind_length, geometry.hind_height, geometry.hind_width
    fr = np.array([[0.0, 0.0, 1.0, Lf], [-1.0, 0.0, 0.0, -Hf / 2], [0.0, -1.0, 0.0, Wf / 2],
                   [0.0, 0.0, 0.0, 1.0]])
    fl = np.array([[0.0, 0.0, 1.0, Lf], [-1.0, 0.0, 0.0, -Hf / 2], [0.0, -1.0, 0.0, -Wf / 2],
                   [0.0, 0.0, 0.0, 1.0]])
    hr = np.array([[1.0, 0.0, 0.0, Hh / 2], [0.0, 1.0, 0.0, -Wh / 2], [0.0, 0.0, 1.0, -Lh],
                   [0.0, 0.0, 0.0, 1.0]])
    hl = np.array([[1.0, 0.0, 0.0, Hh / 2], [0.0, 1.0, 0.0, Wh / 2], [0.0, 0.0, 1.0, -Lh],
                   [0.0, 0.0, 0.0, 1.0]])
    return fr, fl, hr, hl


def rot_x(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def euler_rotation(phi: float, theta: float, psi: float) -> np.ndarray:
    """World-from-body rotation R = Rx(phi) Ry(theta) Rz(psi)."""
    cf, sf = math.cos(phi), math.sin(phi)
    ct, st = math.cos(theta), math.sin(theta)
    cp, sp = math.cos(psi), math.sin(psi)
    return np.array([
        [ct * cp, -ct * sp, st],
        [cf * sp + sf * st * cp, cf * cp - sf * st * sp, -sf * ct],
        [sf * sp - cf * st * cp, sf * cp + cf * st * sp, cf * ct],
    ])


def euler_rate_map(theta: float, psi: float) -> np.ndarray:
    """E such that body-frame angular velocity = E @ (roll, pitch, yaw) rates."""
    ct, st = math.cos(theta), math.sin(theta)
    cp, sp = math.cos(psi), math.sin(psi)
    return np.array([
        [ct * cp, sp, 0.0],
        [-ct * sp, cp, 0.0],
        [st, 0.0, 1.0],
    ])


def _check_pitch(theta: float) -> float:
    ct = math.cos(theta)
    if abs(ct) <= SINGULARITY_EPS:
        raise SingularityError(
            f"base pitch {theta:.12g} rad is within the Euler singularity guard "
            f"(|cos pitch| = {abs(ct):.3g} <= {SINGULARITY_EPS})")
    return ct


def euler_rate_map_inverse(phi: float, theta: float) -> np.ndarray:
    """E_t = E^-1 R^T: world-frame angular velocity -> Euler rates.

    Raises:
        SingularityError: if ``|cos(theta)| <= SINGULARITY_EPS``.
    """
    ct = _check_pitch(theta)
    st = math.sin(theta)
    cf, sf = math.cos(phi), math.sin(phi)
    return np.array([
        [1.0, st * sf / ct, -st * cf / ct],
        [0.0, cf, sf],
        [0.0, -sf / ct, cf / ct],
    ])


def cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise cross product of (..., 3) arrays; leaner than np.cross for tiny inputs."""
    a0, a1, a2 = a[..., 0], a[..., 1], a[..., 2]
    b0, b1, b2 = b[..., 0], b[..., 1], b[..., 2]
    out = np.empty(np.broadcast_shapes(a.shape, b.shape))
    out[..., 0] = a1 * b2 - a2 * b1
    out[..., 1] = a2 * b0 - a0 * b2
    out[..., 2] = a0 * b1 - a1 * b0
    return out


def skew(v: np.ndarray) -> np.ndarray:
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


# --------------------------------------------------------------------------
# Kinematic tree
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class KinematicTree:
    """Frame tree of the robot; every non-root frame is ``fixed @ Rz(q_j)``.

    Frame 0 is the main body. ``joint_q[f]`` is the q-index rotating frame f
    about its own z axis, or -1 for rigidly attached frames.
    """

    names: tuple[str, ...]
    parent: np.ndarray
    fixed_R: np.ndarray
    fixed_p: np.ndarray
    joint_q: np.ndarray
    link_frame: np.ndarray
    link_com: np.ndarray
    link_mass: np.ndarray
    link_inertia: np.ndarray  # diagonal box inertia, link frame
    foot_frame: np.ndarray
    # q-indices of joints between the root and each frame, root first
    frame_path_q: tuple[tuple[int, ...], ...]
    frame_path_frames: tuple[tuple[int, ...], ...]

    @property
    def n_frames(self) -> int:
        return len(self.names)

    @property
    def n_links(self) -> int:
        return len(self.link_frame)


def box_inertia(mass: float, length: float, width: float, height: float) -> np.ndarray:
    """Principal inertia diagonal of a solid box (extents along x, y, z)."""
    return mass / 12.0 * np.array([width ** 2 + height ** 2, length ** 2 + height ** 2,
                                   length ** 2 + width ** 2])


@functools.lru_cache(maxsize=32)
def build_tree(model: RobotModel) -> KinematicTree:
    names: list[str] = ["main_body"]
    parent = [-1]
    fixed = [np.eye(4)]
    joint_q = [-1]

    def add(name, par, T, q_index):
        names.append(name)
        parent.append(par)
        fixed.append(np.asarray(T, dtype=float))
        joint_q.append(q_index)
        return len(names) - 1

    front0, hind0 = spine_transforms(0.0, 0.0, model.geometry.main_length)
    f_front = add("front_body", 0, front0, N_BASE + model.spine_front_joint)
    f_hind = add("hind_body", 0, hind0, N_BASE + model.spine_hind_joint)
    hips = hip_transforms(model.geometry)
    link_frame = {"main_body": 0, "front_body": f_front, "hind_body": f_hind}
    foot_frames = []
    for leg, T_hip in zip(model.legs, hips):
        body = f_front if leg.name.startswith("F") else f_hind
        prev = add(f"{leg.name}_hip", body, T_hip, -1)
        for k, row in enumerate(leg.dh, start=1):
            T = dh_transform(row.a, row.alpha, row.d, row.theta_offset)
            q_index = -1 if row.joint_index is None else N_BASE + row.joint_index
            prev = add(f"{leg.name}_{k}", prev, T, q_index)
            if k == 1:
                link_frame[f"{leg.name}_hip"] = prev
            elif k == 2:
                link_frame[f"{leg.name}_upper"] = prev
            elif k == 3:
                link_frame[f"{leg.name}_lower"] = prev
        foot_frames.append(prev)

    links = model.links()
    link_f = np.array([link_frame[name] for name, _ in links])
    link_com = np.array([p.com_offset for _, p in links], dtype=float)
    link_mass = np.array([p.mass for _, p in links], dtype=float)
    link_inertia = np.array([box_inertia(p.mass, *p.box) for _, p in links])

    paths_q, paths_f = [], []
    for f in range(len(names)):
        chain = []
        g = f
        while g >= 0:
            chain.append(g)
            g = parent[g]
        chain.reverse()
        jf = tuple(c for c in chain if joint_q[c] >= 0)
        paths_f.append(jf)
        paths_q.append(tuple(joint_q[c] for c in jf))

    fixed = np.array(fixed)
    return KinematicTree(
        names=tuple(names),
        parent=np.array(parent),
        fixed_R=fixed[:, :3, :3].copy(),
        fixed_p=fixed[:, :3, 3].copy(),
        joint_q=np.array(joint_q),
        link_frame=link_f,
        link_com=link_com,
        link_mass=link_mass,
        link_inertia=link_inertia,
        foot_frame=np.array(foot_frames),
        frame_path_q=tuple(paths_q),
        frame_path_frames=tuple(paths_f),
    )


@dataclass
class FrameSet:
    """World poses for one configuration (or a batch of them).

    ``rot[..., f, :, :]``/``pos[..., f, :]`` give frame f; ``com[..., i, :]`` is
    the COM of link i, whose orientation is that of frame ``tree.link_frame[i]``;
    ``feet`` holds FR, FL, HR, HL. Leading axes match the leading axes of ``q``.
    """

    q: np.ndarray
    tree: KinematicTree
    rot: np.ndarray
    pos: np.ndarray
    com: np.ndarray
    feet: np.ndarray

    def transform(self, frame: int | str) -> np.ndarray:
        if isinstance(frame, str):
            frame = self.tree.names.index(frame)
        T = np.zeros(self.q.shape[:-1] + (4, 4))
        T[..., :3, :3] = self.rot[..., frame, :, :]
        T[..., :3, 3] = self.pos[..., frame, :]
        T[..., 3, 3] = 1.0
        return T

    def link_rotation(self, link: int) -> np.ndarray:
        return self.rot[..., self.tree.link_frame[link], :, :]

    def com_transform(self, link: int) -> np.ndarray:
        T = self.transform(int(self.tree.link_frame[link]))
        T[..., :3, 3] = self.com[..., link, :]
        return T

    def foot_transform(self, foot: int) -> np.ndarray:
        return self.transform(int(self.tree.foot_frame[foot]))


def _euler_rotation_batch(phi, theta, psi) -> np.ndarray:
    cf, sf = np.cos(phi), np.sin(phi)
    ct, st = np.cos(theta), np.sin(theta)
    cp, sp = np.cos(psi), np.sin(psi)
    R = np.empty(np.shape(phi) + (3, 3))
    R[..., 0, 0] = ct * cp
    R[..., 0, 1] = -ct * sp
    R[..., 0, 2] = st
    R[..., 1, 0] = cf * sp + sf * st * cp
    R[..., 1, 1] = cf * cp - sf * st * sp
    R[..., 1, 2] = -sf * ct
    R[..., 2, 0] = sf * sp - cf * st * cp
    R[..., 2, 1] = sf * cp + cf * st * sp
    R[..., 2, 2] = cf * ct
    return R


def forward_kinematics(model: RobotModel, q) -> FrameSet:
    """World pose of every frame, link COM and foot.

    ``q`` has shape ``(20,)`` or ``(..., 20)`` for a batch of configurations.
    """
    tree = build_tree(model)
    q = np.asarray(q, dtype=float)
    if q.shape[-1:] != (N_DOF,):
        raise ValueError(f"q must have trailing dimension {N_DOF}, got shape {q.shape}")
    batch = q.shape[:-1]
    qb = q.reshape(-1, N_DOF)
    n = tree.n_frames
    rot = np.empty((qb.shape[0], n, 3, 3))
    pos = np.empty((qb.shape[0], n, 3))
    rot[:, 0] = _euler_rotation_batch(qb[:, 3], qb[:, 4], qb[:, 5])
    pos[:, 0] = qb[:, :3]
    parent, fixed_R, fixed_p, joint_q = tree.parent, tree.fixed_R, tree.fixed_p, tree.joint_q
    for f in range(1, n):
        Rp = rot[:, parent[f]]
        pos[:, f] = pos[:, parent[f]] + Rp @ fixed_p[f]
        R = Rp @ fixed_R[f]
        j = joint_q[f]
        if j >= 0:
            c = np.cos(qb[:, j])[:, None]
            s = np.sin(qb[:, j])[:, None]
            c0 = R[:, :, 0].copy()
            R[:, :, 0] = c * c0 + s * R[:, :, 1]
            R[:, :, 1] = -s * c0 + c * R[:, :, 1]
        rot[:, f] = R
    lf = tree.link_frame
    com = pos[:, lf] + np.einsum("blij,lj->bli", rot[:, lf], tree.link_com)
    feet = pos[:, tree.foot_frame]
    return FrameSet(
        q=q, tree=tree,
        rot=rot.reshape(batch + (n, 3, 3)),
        pos=pos.reshape(batch + (n, 3)),
        com=com.reshape(batch + com.shape[1:]),
        feet=feet.reshape(batch + (len(tree.foot_frame), 3)),
    )


# --------------------------------------------------------------------------
# Jacobians
# --------------------------------------------------------------------------

def base_angular_map(q) -> np.ndarray:
    """3x3 map from Euler rates to world angular velocity of the main body."""
    _check_pitch(q[4])
    return euler_rotation(q[3], q[4], q[5]) @ euler_rate_map(q[4], q[5])


def point_jacobian_columns(frames: FrameSet, frame: int, point: np.ndarray,
                           W: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Structurally nonzero columns of the 6xN Jacobian of a point on ``frame``.

    Returns ``(cols, J)`` with ``J`` of shape ``(6, len(cols))``: the point's
    linear velocity rows first, then the frame's angular velocity rows.
    """
    tree = frames.tree
    path_f = tree.frame_path_frames[frame]
    cols = np.empty(N_BASE + len(path_f), dtype=int)
    cols[:N_BASE] = np.arange(N_BASE)
    cols[N_BASE:] = tree.frame_path_q[frame]
    J = np.zeros((6, len(cols)))
    J[0, 0] = J[1, 1] = J[2, 2] = 1.0
    r = point - frames.pos[0]
    J[0:3, 3:6] = cross(W.T, r).T
    J[3:6, 3:6] = W
    if path_f:
        axes = frames.rot[list(path_f), :, 2]
        J[0:3, N_BASE:] = cross(axes, point - frames.pos[list(path_f)]).T
        J[3:6, N_BASE:] = axes.T
    return cols, J


def _expand(cols: np.ndarray, Jsub: np.ndarray) -> np.ndarray:
    J = np.zeros((Jsub.shape[0], N_DOF))
    J[:, cols] = Jsub
    return J


def link_com_jacobian(model: RobotModel, q, link_id: int, frames: FrameSet | None = None) -> np.ndarray:
    """6x20 world-frame Jacobian ``[v_com; w_link]`` of link ``link_id``.

    Raises:
        SingularityError: near base pitch +-pi/2.
    """
    q = np.asarray(q, dtype=float)
    W = base_angular_map(q)
    if frames is None:
        frames = forward_kinematics(model, q)
    frame = int(frames.tree.link_frame[link_id])
    cols, Jsub = point_jacobian_columns(frames, frame, frames.com[link_id], W)
    return _expand(cols, Jsub)


def frame_jacobian(model: RobotModel, q, frame: int | str) -> np.ndarray:
    """6x20 Jacobian of a frame origin (linear) and the frame (angular)."""
    q = np.asarray(q, dtype=float)
    W = base_angular_map(q)
    frames = forward_kinematics(model, q)
    if isinstance(frame, str):
        frame = frames.tree.names.index(frame)
    cols, Jsub = point_jacobian_columns(frames, frame, frames.pos[frame], W)
    return _expand(cols, Jsub)


# Contact-frame row order for each foot: normal (world z), tangents (world x, y).
CONTACT_AXES = (2, 0, 1)


def contact_jacobian(model: RobotModel, q, frames: FrameSet | None = None) -> np.ndarray:
    """12x20 contact Jacobian; per foot (FR, FL, HR, HL) rows are [n, t1, t2]."""
    q = np.asarray(q, dtype=float)
    W = base_angular_map(q)
    if frames is None:
        frames = forward_kinematics(model, q)
    JC = np.zeros((3 * len(LEG_NAMES), N_DOF))
    for k, frame in enumerate(frames.tree.foot_frame):
        cols, Jsub = point_jacobian_columns(frames, int(frame), frames.feet[k], W)
        JC[3 * k:3 * k + 3, cols] = Jsub[list(CONTACT_AXES)]
    return JC
