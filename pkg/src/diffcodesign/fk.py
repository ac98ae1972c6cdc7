"""Articulated-chain forward kinematics with high-order derivatives.

Every joint contributes a motion factor to a product of homogeneous
transforms.  Because each factor owns a disjoint set of variables, the
derivative tensors of the product compose mechanically factor by factor.
Two passes are provided:

* q-pass: transforms with derivatives up to THIRD order in the joint
  coordinates (needed for the exact Newton Jacobian of the implicit
  integrator, whose force term contains Coriolis derivatives).
* theta-pass: mixed derivatives (first order in structural parameters:
  joint origins, body origins, COM offsets; up to second order in q),
  needed for the design-parameter sensitivities in the backward pass.

All tensors are kept local per body (over the ancestor DOF list) and small;
scattering into global vectors happens in the dynamics assembly.
"""

from dataclasses import dataclass, field

import numpy as np

from . import so3

JOINT_FIXED = "fixed"
JOINT_REVOLUTE = "revolute"
JOINT_PRISMATIC = "prismatic"
JOINT_FREE = "free"

_DOF_COUNT = {JOINT_FIXED: 0, JOINT_REVOLUTE: 1, JOINT_PRISMATIC: 1, JOINT_FREE: 6}


def transform(rotation=None, translation=None):
    e = np.eye(4)
    if rotation is not None:
        e[:3, :3] = rotation
    if translation is not None:
        e[:3, 3] = translation
    return e


@dataclass
class Joint:
    name: str
    parent: int
    jtype: str
    E: np.ndarray                      # parent joint frame -> this joint frame, at q = 0
    axis: np.ndarray = None            # revolute/prismatic axis in joint frame
    actuated: bool = False
    damping: float = 0.0
    torque_limit: float = 1.0
    prescribed: object = None          # callable t -> (q, qd, qdd) arrays for this joint
    theta_origin: int = -1             # fk-theta slot of E[:3, 3], or -1
    dof_start: int = -1                # filled by KinematicModel
    free_index: int = -1               # index among free joints, for chart bases

    @property
    def n_dof(self):
        return _DOF_COUNT[self.jtype]


@dataclass
class Body:
    name: str
    joint: int
    E: np.ndarray                      # joint frame -> geometry frame (rotation constant)
    com: np.ndarray                    # COM offset in geometry frame
    mass: float
    inertia: np.ndarray                # (3,) diagonal about COM, geometry axes
    theta_origin: int = -1             # fk-theta slot of E[:3, 3]
    theta_com: int = -1                # fk-theta slot of com


class KinematicModel:
    """Immutable joint/body tree with dof bookkeeping."""

    def __init__(self, joints, bodies, n_theta=0):
        self.joints = joints
        self.bodies = bodies
        self.n_theta = n_theta
        n = 0
        for j in joints:
            j.dof_start = n
            n += j.n_dof
        self.n_q = n
        self.free_joints = [i for i, j in enumerate(joints) if j.jtype == JOINT_FREE]
        for fi, ji in enumerate(self.free_joints):
            joints[ji].free_index = fi
        # per-joint ancestor list (includes self), root first
        self.ancestors = []
        for i, j in enumerate(joints):
            chain = []
            k = i
            while k >= 0:
                chain.append(k)
                k = joints[k].parent
            self.ancestors.append(chain[::-1])

    def dof_ids(self, joint_index):
        j = self.joints[joint_index]
        return list(range(j.dof_start, j.dof_start + j.n_dof))

    def identity_free_base(self):
        return np.tile(np.eye(3), (len(self.free_joints), 1, 1))


# ---------------------------------------------------------------------------
# chain tensors


@dataclass
class ChainQ:
    P: np.ndarray
    dofs: list
    D1: np.ndarray
    D2: np.ndarray = None
    D3: np.ndarray = None

    def rmul_const(self, c):
        return ChainQ(
            self.P @ c,
            list(self.dofs),
            self.D1 @ c,
            None if self.D2 is None else self.D2 @ c,
            None if self.D3 is None else self.D3 @ c,
        )


def _identity_chain_q(order):
    return ChainQ(np.eye(4), [],
                  np.zeros((0, 4, 4)),
                  np.zeros((0, 0, 4, 4)) if order >= 2 else None,
                  np.zeros((0, 0, 0, 4, 4)) if order >= 3 else None)


def _append_motion_q(chain, f, df, d2f, d3f, new_dofs, order):
    o = len(chain.dofs)
    m = len(new_dofs)
    n = o + m
    p_new = chain.P @ f
    d1 = np.empty((n, 4, 4))
    d1[:o] = chain.D1 @ f
    d1[o:] = chain.P @ df
    d2 = d3 = None
    if order >= 2:
        d2 = np.empty((n, n, 4, 4))
        d2[:o, :o] = chain.D2 @ f
        cross = np.matmul(chain.D1[:, None], df[None, :])
        d2[:o, o:] = cross
        d2[o:, :o] = cross.transpose(1, 0, 2, 3)
        d2[o:, o:] = chain.P @ d2f
    if order >= 3:
        d3 = np.empty((n, n, n, 4, 4))
        d3[:o, :o, :o] = chain.D3 @ f
        x = np.matmul(chain.D2[:, :, None], df[None, None, :])
        d3[:o, :o, o:] = x
        d3[:o, o:, :o] = x.transpose(0, 2, 1, 3, 4)
        d3[o:, :o, :o] = x.transpose(2, 0, 1, 3, 4)
        y = np.matmul(chain.D1[:, None, None], d2f[None, :, :])
        d3[:o, o:, o:] = y
        d3[o:, :o, o:] = y.transpose(1, 0, 2, 3, 4)
        d3[o:, o:, :o] = y.transpose(1, 2, 0, 3, 4)
        d3[o:, o:, o:] = chain.P @ d3f
    return ChainQ(p_new, list(chain.dofs) + list(new_dofs), d1, d2, d3)


@dataclass
class ChainTheta:
    """Mixed tensors: value, q-derivs to 2nd order, theta-derivs to 1st order."""

    P: np.ndarray
    dofs: list
    thetas: list
    Dq: np.ndarray
    Dqq: np.ndarray
    Dt: np.ndarray
    Dtq: np.ndarray
    Dtqq: np.ndarray

    def rmul_const(self, c):
        return ChainTheta(self.P @ c, list(self.dofs), list(self.thetas),
                          self.Dq @ c, self.Dqq @ c, self.Dt @ c,
                          self.Dtq @ c, self.Dtqq @ c)


def _identity_chain_theta():
    z = np.zeros
    return ChainTheta(np.eye(4), [], [], z((0, 4, 4)), z((0, 0, 4, 4)),
                      z((0, 4, 4)), z((0, 0, 4, 4)), z((0, 0, 0, 4, 4)))


def _append_motion_theta(ch, f, df, d2f, new_dofs):
    o = len(ch.dofs)
    m = len(new_dofs)
    n = o + m
    t = len(ch.thetas)
    p_new = ch.P @ f
    dq = np.empty((n, 4, 4))
    dq[:o] = ch.Dq @ f
    dq[o:] = ch.P @ df
    dqq = np.empty((n, n, 4, 4))
    dqq[:o, :o] = ch.Dqq @ f
    cross = np.matmul(ch.Dq[:, None], df[None, :])
    dqq[:o, o:] = cross
    dqq[o:, :o] = cross.transpose(1, 0, 2, 3)
    dqq[o:, o:] = ch.P @ d2f
    dt = ch.Dt @ f
    dtq = np.empty((t, n, 4, 4))
    dtq[:, :o] = ch.Dtq @ f
    dtq[:, o:] = np.matmul(ch.Dt[:, None], df[None, :])
    dtqq = np.empty((t, n, n, 4, 4))
    dtqq[:, :o, :o] = ch.Dtqq @ f
    xc = np.matmul(ch.Dtq[:, :, None], df[None, None, :])
    dtqq[:, :o, o:] = xc
    dtqq[:, o:, :o] = xc.transpose(0, 2, 1, 3, 4)
    dtqq[:, o:, o:] = np.matmul(ch.Dt[:, None, None], d2f[None, :, :])
    return ChainTheta(p_new, list(ch.dofs) + list(new_dofs), list(ch.thetas),
                      dq, dqq, dt, dtq, dtqq)


_T_GEN = np.zeros((3, 4, 4))
for _i in range(3):
    _T_GEN[_i, _i, 3] = 1.0


def _append_translation_theta(ch, tvec, theta_ids):
    """Append Trans(t) whose 3 translation entries are theta variables."""
    f = transform(translation=tvec)
    o = len(ch.dofs)
    t = len(ch.thetas)
    p_new = ch.P @ f
    dq = ch.Dq @ f
    dqq = ch.Dqq @ f
    dt = np.empty((t + 3, 4, 4))
    dt[:t] = ch.Dt @ f
    dt[t:] = ch.P @ _T_GEN
    dtq = np.empty((t + 3, o, 4, 4))
    dtq[:t] = ch.Dtq @ f
    # the appended factor owns theta only, so mixed partials factorize:
    # d2(P F)/dtheta_a dq_k = (dP/dq_k) T_a
    dtq[t:] = np.matmul(ch.Dq[None, :], _T_GEN[:, None])
    dtqq = np.empty((t + 3, o, o, 4, 4))
    dtqq[:t] = ch.Dtqq @ f
    dtqq[t:] = np.matmul(ch.Dqq[None, :, :], _T_GEN[:, None, None])
    return ChainTheta(p_new, list(ch.dofs), list(ch.thetas) + list(theta_ids),
                      dq, dqq, dt, dtq, dtqq)


# ---------------------------------------------------------------------------
# joint motion factors


def _motion_factor(joint, qj, free_base, order):
    """Factor E_j @ Q_j(q_j) with derivatives w.r.t. the joint's own dofs."""
    e = joint.E
    if joint.jtype == JOINT_FIXED:
        return e.copy(), np.zeros((0, 4, 4)), np.zeros((0, 0, 4, 4)), np.zeros((0, 0, 0, 4, 4))
    if joint.jtype == JOINT_REVOLUTE:
        k = so3.hat(joint.axis)
        r = so3.exp_so3(joint.axis * qj[0])
        f = transform(rotation=r)
        df = np.zeros((1, 4, 4))
        df[0, :3, :3] = k @ r
        d2f = np.zeros((1, 1, 4, 4))
        d2f[0, 0, :3, :3] = k @ k @ r
        d3f = np.zeros((1, 1, 1, 4, 4))
        d3f[0, 0, 0, :3, :3] = k @ k @ k @ r
        return e @ f, e @ df, e @ d2f, e @ d3f
    if joint.jtype == JOINT_PRISMATIC:
        f = transform(translation=joint.axis * qj[0])
        df = np.zeros((1, 4, 4))
        df[0, :3, 3] = joint.axis
        return e @ f, e @ df, np.zeros((1, 1, 4, 4)), np.zeros((1, 1, 1, 4, 4))
    if joint.jtype == JOINT_FREE:
        p = qj[:3]
        w = qj[3:6]
        r0 = free_base[joint.free_index]
        rr, d1r, d2r, d3r = so3.exp_so3_derivs(w, order=max(order, 1))
        f = transform(rotation=r0 @ rr, translation=p)
        df = np.zeros((6, 4, 4))
        df[:3] = _T_GEN
        df[3:, :3, :3] = r0 @ d1r
        d2f = np.zeros((6, 6, 4, 4))
        if order >= 2:
            d2f[3:, 3:, :3, :3] = r0 @ d2r
        d3f = np.zeros((6, 6, 6, 4, 4))
        if order >= 3:
            d3f[3:, 3:, 3:, :3, :3] = r0 @ d3r
        return e @ f, e @ df, e @ d2f, e @ d3f
    raise ValueError(joint.jtype)


# ---------------------------------------------------------------------------
# public passes


@dataclass
class BodyFKQ:
    dofs: list
    W: np.ndarray            # geometry frame
    D1: np.ndarray
    D2: np.ndarray
    D3: np.ndarray
    Wc: np.ndarray           # COM frame (rotation equals geometry rotation)
    D1c: np.ndarray
    D2c: np.ndarray
    D3c: np.ndarray


def fk_q(model, q, free_base=None, order=3):
    """Geometry- and COM-frame transforms with q-derivatives per body."""
    if free_base is None:
        free_base = model.identity_free_base()
    chains = []
    for ji, joint in enumerate(model.joints):
        base = chains[joint.parent] if joint.parent >= 0 else _identity_chain_q(order)
        qj = q[joint.dof_start: joint.dof_start + joint.n_dof]
        f, df, d2f, d3f = _motion_factor(joint, qj, free_base, order)
        chains.append(_append_motion_q(base, f, df, d2f, d3f, model.dof_ids(ji), order))
    out = []
    for body in model.bodies:
        geo = chains[body.joint].rmul_const(body.E)
        com = geo.rmul_const(transform(translation=body.com))
        out.append(BodyFKQ(geo.dofs, geo.P, geo.D1, geo.D2, geo.D3,
                           com.P, com.D1, com.D2, com.D3))
    return out


@dataclass
class BodyFKTheta:
    dofs: list
    thetas: list
    geo: ChainTheta
    com: ChainTheta


def fk_theta(model, q, free_base=None):
    """Mixed structural-parameter/q derivatives per body (backward pass)."""
    if free_base is None:
        free_base = model.identity_free_base()
    chains = []
    for ji, joint in enumerate(model.joints):
        base = chains[joint.parent] if joint.parent >= 0 else _identity_chain_theta()
        qj = q[joint.dof_start: joint.dof_start + joint.n_dof]
        if joint.theta_origin >= 0:
            tvec = joint.E[:3, 3]
            rot = transform(rotation=joint.E[:3, :3])
            base = _append_translation_theta(
                base, tvec, [joint.theta_origin + i for i in range(3)])
            jtmp = Joint(joint.name, joint.parent, joint.jtype, rot,
                         axis=joint.axis, free_index=joint.free_index)
            f, df, d2f, _ = _motion_factor(jtmp, qj, free_base, order=2)
        else:
            f, df, d2f, _ = _motion_factor(joint, qj, free_base, order=2)
        chains.append(_append_motion_theta(base, f, df, d2f, model.dof_ids(ji)))
    out = []
    for body in model.bodies:
        ch = chains[body.joint]
        if body.theta_origin >= 0:
            ch = _append_translation_theta(ch, body.E[:3, 3],
                                           [body.theta_origin + i for i in range(3)])
            ch = ch.rmul_const(transform(rotation=body.E[:3, :3]))
        else:
            ch = ch.rmul_const(body.E)
        geo = ch
        if body.theta_com >= 0:
            com = _append_translation_theta(geo, body.com,
                                            [body.theta_com + i for i in range(3)])
        else:
            com = geo.rmul_const(transform(translation=body.com))
        out.append(BodyFKTheta(geo.dofs, com.thetas, geo, com))
    return out


# ---------------------------------------------------------------------------
# velocity-level quantities for the Lagrangian assembly


def _vee_stack(m):
    """vee of a stack (..., 3, 3) of skew matrices."""
    return np.stack([m[..., 2, 1], m[..., 0, 2], m[..., 1, 0]], axis=-1)


def body_jacobians(fkq, order=3):
    """Angular/linear COM-frame Jacobians and their q-derivatives.

    G[k] with hat(G[k]) = R^T dR/dq_k (body-frame angular velocity Jacobian),
    P[k] = d p_com / dq_k (world).  Returns (G, P, dG, dP, d2G, d2P), higher
    orders None when not requested.
    """
    r = fkq.Wc[:3, :3]
    d1r = fkq.D1c[:, :3, :3]
    g = _vee_stack(np.einsum("ai,kaj->kij", r, d1r))
    p = fkq.D1c[:, :3, 3].copy()
    dg = dp = d2g = d2p = None
    if order >= 2:
        d2r = fkq.D2c[:, :, :3, :3]
        term = np.einsum("lai,kaj->klij", d1r, d1r) + np.einsum("ai,klaj->klij", r, d2r)
        dg = _vee_stack(term)          # dG[k, l] = d G[k] / dq_l
        dp = fkq.D2c[:, :, :3, 3].copy()
    if order >= 3:
        d3r = fkq.D3c[:, :, :, :3, :3]
        term = (
            np.einsum("lmai,kaj->klmij", fkq.D2c[:, :, :3, :3], d1r)
            + np.einsum("lai,kmaj->klmij", d1r, fkq.D2c[:, :, :3, :3])
            + np.einsum("mai,klaj->klmij", d1r, fkq.D2c[:, :, :3, :3])
            + np.einsum("ai,klmaj->klmij", r, d3r)
        )
        d2g = _vee_stack(term)         # d2G[k, l, m]
        d2p = fkq.D3c[:, :, :, :3, 3].copy()
    return g, p, dg, dp, d2g, d2p
