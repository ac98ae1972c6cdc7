"""Penalty frictional contact between bodies through signed distance queries.

Robot-side contact points (tracked through the cage deformation) are tested
against an SDF attached to another body or to the world.  The normal force
a*(k_n*d + k_d*d*ddot) vanishes with the penetration depth d, which keeps the
force continuous at the moment of collision even when the approach speed is
nonzero.  Friction is a tanh-regularized Coulomb force, smooth through zero
slip speed.  All derivatives (w.r.t. both bodies' coordinates and velocities,
the body-frame point positions, the areas, and structural frame parameters)
are assembled analytically from one primitive-perturbation kernel.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import so3


@dataclass
class ContactMaterial:
    k_n: float = 1.0e6       # normal stiffness per area: force = a*k_n*d ...
    k_d: float = 1.0e7       # damping: force += a*k_d*d*ddot
    mu: float = 0.8
    eps_v: float = 1.0e-3    # slip-speed regularization scale (m/s)


@dataclass
class ContactPair:
    """Points on body_a queried against an SDF carried by body_b (or the world)."""

    body_a: int
    points: np.ndarray                 # (P, 3) in body_a geometry frame
    areas: np.ndarray                  # (P,)
    sdf: object
    body_b: int = -1                   # -1: SDF fixed in the world
    b_frame: np.ndarray = field(default_factory=lambda: np.eye(4))
    material: ContactMaterial = field(default_factory=ContactMaterial)
    psip_points: np.ndarray = None     # (P,) psi_p index of each point's x coord
    psip_areas: np.ndarray = None      # (P,)
    label: str = ""

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        self.areas = np.asarray(self.areas, dtype=float)


def _tanh_over_r(r2, eps_v):
    """t = tanh(r/eps)/r as a smooth function of r^2; returns (t, dt/dr2)."""
    u = r2 / (eps_v * eps_v)
    if u < 1e-6:
        tau = 1.0 - u / 3.0 + 2.0 * u * u / 15.0
        dtau = -1.0 / 3.0 + 4.0 * u / 15.0
    else:
        su = math.sqrt(u)
        th = math.tanh(su)
        tau = th / su
        sech2 = 1.0 - th * th
        dtau = (sech2 * 0.5 - th / (2.0 * su)) / u
    return tau / eps_v, dtau / (eps_v ** 3)


@dataclass
class ContactQuery:
    """Contact kinematics of one world point against a carried SDF.

    Derivative blocks are w.r.t. the primitive inputs (world point x, its
    velocity xdot, carrier origin p_b, carrier angular/linear velocity); the
    chain into generalized coordinates happens in the force assembly where
    the kinematic Jacobians live.  Blocks are None for non-penetrating or
    medial-flagged queries.
    """

    d: float
    ddot: float
    n: np.ndarray
    vt: np.ndarray
    medial: bool
    d_d: dict = None
    d_ddot: dict = None
    d_n: dict = None
    d_vt: dict = None


def query(sdf_obj, x, xdot, pose_b=None, vel_b=None):
    """Penetration depth/speed, normal, and tangential velocity of one point."""
    r_b, p_b = pose_b if pose_b is not None else (np.eye(3), np.zeros(3))
    om_b, pd_b = vel_b if vel_b is not None else (np.zeros(3), np.zeros(3))
    x = np.asarray(x, dtype=float)
    xdot = np.asarray(xdot, dtype=float)
    y = r_b.T @ (x - p_b)
    res = sdf_obj.query(y[None, :])
    phi = float(res.phi[0])
    g = res.grad[0]
    h = res.hess[0]
    medial = bool(res.medial[0])
    n = r_b @ g
    rvec = x - p_b
    w_rel = xdot - pd_b - np.cross(om_b, rvec)
    phidot = float(n @ w_rel)
    cq = ContactQuery(d=max(0.0, -phi), ddot=-phidot, n=n,
                      vt=w_rel - phidot * n, medial=medial)
    if phi >= 0.0 or medial:
        return cq

    dn_dx = r_b @ h @ r_b.T
    hom = so3.hat(om_b)
    eye = np.eye(3)
    cq.d_d = {"x": -n, "p_b": n}
    cq.d_n = {"x": dn_dx, "p_b": -dn_dx}
    dphidot = {
        "x": w_rel @ dn_dx + n @ (-hom),
        "xdot": n,
        "p_b": w_rel @ (-dn_dx) + n @ hom,
        "omega_b": n @ so3.hat(rvec),
        "pdot_b": -n,
    }
    cq.d_ddot = {k: -val for k, val in dphidot.items()}
    cq.d_vt = {}
    dw = {"x": -hom, "xdot": eye, "p_b": hom,
          "omega_b": so3.hat(rvec), "pdot_b": -eye}
    dn_map = {"x": dn_dx, "p_b": -dn_dx}
    for key in dw:
        dn_k = dn_map.get(key, np.zeros((3, 3)))
        cq.d_vt[key] = dw[key] - np.outer(n, dphidot[key]) - phidot * dn_k
    return cq


def contact_force(cq, area, material, scale=1.0):
    """World force of one query plus partials w.r.t. (d, ddot, n, vt, a)."""
    if cq.d <= 0.0 or cq.medial:
        return np.zeros(3), None
    raw = scale * area * (material.k_n * cq.d + material.k_d * cq.d * cq.ddot)
    if raw <= 0.0:
        return np.zeros(3), None
    r2 = float(cq.vt @ cq.vt)
    tf, dtf = _tanh_over_r(r2, material.eps_v)
    force = raw * cq.n - material.mu * raw * tf * cq.vt
    dir_part = cq.n - material.mu * tf * cq.vt
    partials = {
        "d": scale * area * (material.k_n + material.k_d * cq.ddot) * dir_part,
        "ddot": scale * area * material.k_d * cq.d * dir_part,
        "n": raw * np.eye(3),
        "vt": -material.mu * raw * (tf * np.eye(3)
                                    + 2.0 * dtf * np.outer(cq.vt, cq.vt)),
        "a": force / area,
    }
    return force, partials


class PairState:
    """Per-point contact state of one pair at (q, v), active points only."""

    def __init__(self, pair, fk_a, fk_b, v, scale):
        self.pair = pair
        mat = pair.material
        c = pair.points
        wa = fk_a.W
        ra = wa[:3, :3]
        self.ra = ra
        self.dofs_a = list(fk_a.dofs)
        va = v[self.dofs_a]
        self.va = va
        x = c @ ra.T + wa[:3, 3]
        d1ra = fk_a.D1[:, :3, :3]
        self.d1ra = d1ra
        jp = np.einsum("kab,pb->kpa", d1ra, c) + fk_a.D1[:, None, :3, 3]
        xdot = np.einsum("kpa,k->pa", jp, va)
        self.radot = np.einsum("kab,k->ab", d1ra, va)

        if pair.body_b >= 0:
            wb = fk_b.W
            self.dofs_b = list(fk_b.dofs)
            vb = v[self.dofs_b]
            self.vb = vb
            self.d1rb = fk_b.D1[:, :3, :3]
            self.d1pb = fk_b.D1[:, :3, 3]
            rb = wb[:3, :3]
            pb = wb[:3, 3]
            rbdot = np.einsum("kab,k->ab", self.d1rb, vb)
            om = so3.vee(rbdot @ rb.T)
            pbdot = self.d1pb.T @ vb
            self.rbdot = rbdot
        else:
            self.dofs_b = []
            rb = pair.b_frame[:3, :3]
            pb = pair.b_frame[:3, 3]
            om = np.zeros(3)
            pbdot = np.zeros(3)
            self.d1rb = np.zeros((0, 3, 3))
            self.d1pb = np.zeros((0, 3))
            self.rbdot = np.zeros((3, 3))
        self.rb, self.pb, self.om, self.pbdot = rb, pb, om, pbdot

        y = (x - pb[None, :]) @ rb
        res = pair.sdf.query(y)
        pen = res.phi < 0.0
        self.n_medial = int(np.count_nonzero(res.medial & pen))
        pen &= ~res.medial

        d_all = np.maximum(0.0, -res.phi)
        n_all = res.grad @ rb.T
        rvec = x - pb[None, :]
        w_rel = xdot - pbdot[None, :] - np.cross(np.broadcast_to(om, x.shape), rvec)
        phidot = np.einsum("pa,pa->p", n_all, w_rel)
        raw = scale * pair.areas * (mat.k_n * d_all + mat.k_d * d_all * (-phidot))
        active = pen & (raw > 0.0)
        self.n_active = int(np.count_nonzero(active))
        if self.n_active == 0:
            return

        ii = np.where(active)[0]
        self.idx = ii
        self.c = c[ii]
        self.x = x[ii]
        self.jp = jp[:, ii]
        self.y = y[ii]
        self.g = res.grad[ii]
        self.h = res.hess[ii]
        self.n = n_all[ii]
        self.rvec = rvec[ii]
        self.w_rel = w_rel[ii]
        self.phidot = phidot[ii]
        self.d = d_all[ii]
        self.areas = pair.areas[ii]
        self.scale = scale
        self.mat = mat

        self.vt = self.w_rel - self.phidot[:, None] * self.n
        self.r2 = np.einsum("pa,pa->p", self.vt, self.vt)
        tf = np.empty(self.n_active)
        dtf = np.empty(self.n_active)
        for i, r2i in enumerate(self.r2):
            tf[i], dtf[i] = _tanh_over_r(float(r2i), mat.eps_v)
        self.tf, self.dtf = tf, dtf
        self.raw = raw[ii]
        self.force = self.raw[:, None] * self.n - (mat.mu * self.raw * tf)[:, None] * self.vt

        if pair.body_b >= 0:
            self.jbp = (np.einsum("kab,pb->kpa", self.d1rb, self.y)
                        + self.d1pb[:, None, :])
        else:
            self.jbp = None
        self.hn_dy = np.einsum("ab,pbc->pac", rb, self.h)   # d n / d y

    # -- primitive perturbation kernel ---------------------------------------

    def d_force(self, dx=None, dxdot=None, drb=None, dpb=None, dom=None, dpbdot=None):
        """dF (p, 3) for per-point/global perturbations of the primitive inputs.

        dx, dxdot: (p, 3); drb: (3, 3); dpb, dom, dpbdot: (3,).  None = zero.
        """
        p = self.n_active
        z = np.zeros((p, 3))
        dy = z
        if dx is not None:
            dy = dy + dx @ self.rb
        if dpb is not None:
            dy = dy - self.rb.T @ dpb
        if drb is not None:
            dy = dy + self.rvec @ drb
        dphi = np.einsum("pa,pa->p", self.g, dy)
        dd = -dphi
        dn = np.einsum("pac,pc->pa", self.hn_dy, dy)
        if drb is not None:
            dn = dn + self.g @ drb.T

        dw = z
        if dxdot is not None:
            dw = dw + dxdot
        if dpbdot is not None:
            dw = dw - dpbdot
        if dom is not None:
            dw = dw - np.cross(np.broadcast_to(dom, (p, 3)), self.rvec)
        if dx is not None or dpb is not None:
            drvec = (dx if dx is not None else z) - (dpb if dpb is not None else 0.0)
            dw = dw - np.cross(np.broadcast_to(self.om, (p, 3)), drvec)

        mat = self.mat
        dphidot = np.einsum("pa,pa->p", self.w_rel, dn) + np.einsum("pa,pa->p", self.n, dw)
        dvt = dw - self.n * dphidot[:, None] - self.phidot[:, None] * dn
        draw = self.scale * self.areas * ((mat.k_n - mat.k_d * self.phidot) * dd
                                          - mat.k_d * self.d * dphidot)
        dr2 = 2.0 * np.einsum("pa,pa->p", self.vt, dvt)
        dtf = self.dtf * dr2
        return (self.n * draw[:, None] + self.raw[:, None] * dn
                - mat.mu * ((self.tf * draw + self.raw * dtf)[:, None] * self.vt
                            + (self.raw * self.tf)[:, None] * dvt))

    # -- chains into q and v ---------------------------------------------------

    def dF_chains(self, fk_a, fk_b, n_q):
        """dF/dq and dF/dv per global dof: arrays (n_q, p, 3)."""
        p = self.n_active
        dF_dq = {}
        dF_dv = {}
        d2a = fk_a.D2
        djp_dq_local = (np.einsum("klab,pb->klpa", d2a[:, :, :3, :3], self.c)
                        + d2a[:, :, None, :3, 3])
        dxdot_dq = np.einsum("lkpa,l->kpa", djp_dq_local, self.va)
        for k, dof in enumerate(self.dofs_a):
            dF_dq[dof] = self.d_force(dx=self.jp[k], dxdot=dxdot_dq[k])
            dF_dv[dof] = self.d_force(dxdot=self.jp[k])

        if fk_b is not None:
            d2b = fk_b.D2
            rb = self.rb
            vb = self.vb
            kb = len(self.dofs_b)
            dom_dv = np.stack([so3.vee(self.d1rb[k] @ rb.T) for k in range(kb)]) if kb else np.zeros((0, 3))
            dom_dq = np.stack([
                so3.vee(np.einsum("lab,l->ab", d2b[:, k, :3, :3], vb) @ rb.T
                        + self.rbdot @ self.d1rb[k].T)
                for k in range(kb)
            ]) if kb else np.zeros((0, 3))
            dpbdot_dq = np.einsum("lkb,l->kb", d2b[:, :, :3, 3], vb) if kb else np.zeros((0, 3))
            for k, dof in enumerate(self.dofs_b):
                add_q = self.d_force(drb=self.d1rb[k], dpb=self.d1pb[k],
                                     dom=dom_dq[k], dpbdot=dpbdot_dq[k])
                add_v = self.d_force(dom=dom_dv[k], dpbdot=self.d1pb[k])
                dF_dq[dof] = dF_dq.get(dof, 0.0) + add_q
                dF_dv[dof] = dF_dv.get(dof, 0.0) + add_v
        self._djp_dq_local = djp_dq_local
        return dF_dq, dF_dv

    def dy_dq_full(self, n_q):
        """dy/dq (n_q, p, 3) for the B-side material-point jacobian chain."""
        p = self.n_active
        out = {}
        for k, dof in enumerate(self.dofs_a):
            out[dof] = self.jp[k] @ self.rb
        for k, dof in enumerate(self.dofs_b):
            add = self.rvec @ self.d1rb[k] - self.rb.T @ self.d1pb[k]
            out[dof] = out.get(dof, 0.0) + add
        return out


def assemble_pair(pair, fk_bodies, q, v, scale, order=1):
    """Generalized force of one pair and optional q/v derivative blocks.

    Returns (f, df_dq, df_dv, n_medial) with dense (n_q, n_q) derivative
    matrices (zero outside involved dofs).
    """
    n_q = v.shape[0]
    fk_a = fk_bodies[pair.body_a]
    fk_b = fk_bodies[pair.body_b] if pair.body_b >= 0 else None
    st = PairState(pair, fk_a, fk_b, v, scale)
    zero_mats = (np.zeros((n_q, n_q)), np.zeros((n_q, n_q))) if order >= 1 else (None, None)
    if st.n_active == 0:
        return np.zeros(n_q), zero_mats[0], zero_mats[1], st.n_medial

    da = st.dofs_a
    db = st.dofs_b
    f = np.zeros(n_q)
    f[da] += np.einsum("kpa,pa->k", st.jp, st.force)
    if fk_b is not None:
        for k, dof in enumerate(db):
            f[dof] -= st.jbp[k].ravel() @ st.force.ravel()
    if order < 1:
        return f, None, None, st.n_medial

    dF_dq, dF_dv = st.dF_chains(fk_a, fk_b, n_q)
    df_dq = np.zeros((n_q, n_q))
    df_dv = np.zeros((n_q, n_q))

    # A rows
    for col, dfq in dF_dq.items():
        df_dq[da, col] += np.einsum("kpa,pa->k", st.jp, dfq)
    for col, dfv in dF_dv.items():
        df_dv[da, col] += np.einsum("kpa,pa->k", st.jp, dfv)
    djp = st._djp_dq_local
    df_dq[np.ix_(da, da)] += np.einsum("klpa,pa->kl", djp, st.force)

    if fk_b is not None:
        dy_dq = st.dy_dq_full(n_q)
        d2b = fk_b.D2
        for col, dfq in dF_dq.items():
            df_dq[db, col] -= np.einsum("kpa,pa->k", st.jbp, dfq)
        for col, dfv in dF_dv.items():
            df_dv[db, col] -= np.einsum("kpa,pa->k", st.jbp, dfv)
        # d jbp / dq:
        for col, dy in dy_dq.items():
            for k, dof in enumerate(db):
                df_dq[dof, col] -= np.einsum("ab,pb,pa->", st.d1rb[k], dy, st.force)
        for k, dof in enumerate(db):
            for k2, col in enumerate(db):
                term = (np.einsum("ab,pb->pa", d2b[k, k2, :3, :3], st.y)
                        + d2b[k, k2, :3, 3][None, :])
                df_dq[dof, col] -= np.einsum("pa,pa->", term, st.force)

    return f, df_dq, df_dv, st.n_medial


def pair_vjps(pair, fk_a, fk_b, fk_theta_a, v, scale, lam):
    """Backward contributions lam^T d f_pair / d (C, a, theta_fk).

    lam is a full (n_q,) adjoint vector (already masked to dynamic rows).
    Returns (vjp_points (P, 3), vjp_areas (P,), vjp_theta (n_theta,) dict-like
    accumulated on the fly).  The B side must carry no structural parameters.
    """
    st = PairState(pair, fk_a, fk_b, v, scale)
    P = pair.points.shape[0]
    vjp_points = np.zeros((P, 3))
    vjp_areas = np.zeros(P)
    vjp_theta = {}
    if st.n_active == 0:
        return vjp_points, vjp_areas, vjp_theta

    lam_a = lam[st.dofs_a]
    lam_b = lam[st.dofs_b] if fk_b is not None else np.zeros(0)
    # virtual velocity of lambda at each contact point
    cap = np.einsum("k,kpa->pa", lam_a, st.jp)
    if fk_b is not None:
        cap = cap - np.einsum("k,kpa->pa", lam_b, st.jbp)

    # areas: F proportional to a
    vjp_areas[st.idx] = np.einsum("pa,pa->p", cap, st.force / st.areas[:, None])

    # points: dx = ra e_c, dxdot = radot e_c, plus jacobian-dependence terms
    for ccoord in range(3):
        e = np.zeros(3)
        e[ccoord] = 1.0
        dx = np.broadcast_to(st.ra @ e, (st.n_active, 3))
        dxdot = np.broadcast_to(st.radot @ e, (st.n_active, 3))
        dF = st.d_force(dx=dx, dxdot=dxdot)
        val = np.einsum("pa,pa->p", cap, dF)
        # d jp[k]/dC_c = d1ra[k][:, c]
        val += np.einsum("k,ka,pa->p", lam_a, st.d1ra[:, :, ccoord], st.force) \
            if st.d1ra.size else 0.0
        if fk_b is not None:
            # d jbp[k]/dC_c = d1rb[k] @ dy/dC_c, dy/dC_c = rb^T ra e_c
            dyc = st.rb.T @ (st.ra @ e)
            val -= np.einsum("k,kab,b,pa->p", lam_b, st.d1rb, dyc,
                             st.force) if len(st.dofs_b) else 0.0
        vjp_points[st.idx, ccoord] = val

    # structural theta of the A side
    if fk_theta_a is not None and len(fk_theta_a.com.thetas):
        geo = fk_theta_a.geo
        va = st.va
        for a_local, a_id in enumerate(geo.thetas):
            dtr = geo.Dt[a_local, :3, :3]
            dtp = geo.Dt[a_local, :3, 3]
            dx = st.c @ dtr.T + dtp
            dtq_r = geo.Dtq[a_local, :, :3, :3]
            dtq_p = geo.Dtq[a_local, :, :3, 3]
            dxdot = np.einsum("kab,k,pb->pa", dtq_r, va, st.c) + va @ dtq_p
            dF = st.d_force(dx=dx, dxdot=dxdot)
            val = float(np.einsum("pa,pa->", cap, dF))
            # d jp[k]/dtheta = Dtq[a,k] applied to C
            djp = np.einsum("kab,pb->kpa", dtq_r, st.c) + dtq_p[:, None, :]
            val += float(np.einsum("k,kpa,pa->", lam_a, djp, st.force))
            if fk_b is not None and len(st.dofs_b):
                dy = dx @ st.rb
                val -= float(np.einsum("k,kab,pb,pa->", lam_b, st.d1rb, dy, st.force))
            vjp_theta[a_id] = vjp_theta.get(a_id, 0.0) + val
    return vjp_points, vjp_areas, vjp_theta
