"""Discrete adjoint of the implicit BDF2/SDIRK2 rollout.

Differentiates the time-stepping scheme itself: each step's converged state
is treated as an implicit function of its history through the velocity-form
residual rho(v+; ...) = 0, whose final Newton matrix was stored during the
forward pass.  BDF2's two-step history makes the adjoint recurrence block
banded (each adjoint feeds two earlier states); it is solved by one reverse
sweep.  Design-parameter sensitivities accumulate per record from the mixed
structural/joint-coordinate kinematic tensors, the inertia parameter terms,
and the contact point/area terms.
"""

from dataclasses import dataclass

import numpy as np

from . import fk
from .contact import pair_vjps
from .errors import DimensionMismatch


def _vee_stack(m):
    return np.stack([m[..., 2, 1], m[..., 0, 2], m[..., 1, 0]], axis=-1)


@dataclass
class LossPartials:
    """Per-state loss gradients plus direct control/parameter terms."""

    value: float
    dl_dq: np.ndarray       # (n_states, n_q)
    dl_dv: np.ndarray       # (n_states, n_q)
    dl_du: np.ndarray       # (n_segments, n_act)
    dl_dpsip: np.ndarray    # (n_psip,)


def _theta_rho_vjp(scene, rec, lam_full, dl_dpsip, coef):
    """Accumulate lam^T d rho / d psi_p for one record into dl_dpsip."""
    model = scene.model
    q = rec.q
    v = rec.v
    # reconstruct Delta v exactly as the residual consumed it
    dyn = scene.dynamic
    # residual used dv = v - sum(alpha * v_parent); rebuild from stored parents
    # is not needed here: the mass-matrix term's theta-derivative needs the
    # same dv vector, which we recover from rho = M dv - coef f at the
    # converged point.  Cheaper: rollout stored it implicitly; recompute:
    dv = rec._dv_full

    fkq = fk.fk_q(model, q, rec.free_base, order=2)
    fkt = fk.fk_theta(model, q, rec.free_base)

    any_theta = scene.theta_fk_to_psip.size > 0
    for bi, body in enumerate(model.bodies):
        if body.mass == 0.0:
            continue
        has_inertia_psip = bi in scene.body_mass_psip or bi in scene.body_inertia_psip
        bt = fkt[bi]
        has_theta = any_theta and len(bt.com.thetas) > 0
        if not (has_theta or has_inertia_psip):
            continue
        bq = fkq[bi]
        idx = np.asarray(bq.dofs, dtype=int)
        lam_loc = lam_full[idx]
        if not np.any(lam_loc):
            continue
        v_loc = v[idx]
        dv_loc = dv[idx]
        g, p, dg, dp, _, _ = fk.body_jacobians(bq, order=2)
        inert = body.inertia
        mass = body.mass
        grav = scene.gravity

        if has_inertia_psip:
            # mass entry
            if bi in scene.body_mass_psip:
                dm = p @ p.T                                    # dM/dm
                t_m = np.einsum("kra,la->klr", dp, p) + np.einsum("ka,lra->klr", p, dp)
                dc_m = np.einsum("klr,l,r->k", t_m, v_loc, v_loc) \
                    - 0.5 * np.einsum("lrk,l,r->k", t_m, v_loc, v_loc)
                df_m = p @ grav - dc_m
                val = lam_loc @ (dm @ dv_loc) - coef * (lam_loc @ df_m)
                dl_dpsip[scene.body_mass_psip[bi]] += val
            if bi in scene.body_inertia_psip:
                ids = scene.body_inertia_psip[bi]
                for ax in range(3):
                    dmi = np.outer(g[:, ax], g[:, ax])
                    t_i = (np.einsum("kr,l->klr", dg[:, :, ax], g[:, ax])
                           + np.einsum("k,lr->klr", g[:, ax], dg[:, :, ax]))
                    dc_i = np.einsum("klr,l,r->k", t_i, v_loc, v_loc) \
                        - 0.5 * np.einsum("lrk,l,r->k", t_i, v_loc, v_loc)
                    val = lam_loc @ (dmi @ dv_loc) + coef * (lam_loc @ dc_i)
                    dl_dpsip[ids[ax]] += val

        if not has_theta:
            continue
        ch = bt.com
        r = ch.P[:3, :3]
        d1r = ch.Dq[:, :3, :3]
        d2r = ch.Dqq[:, :, :3, :3]
        dtr = ch.Dt[:, :3, :3]
        dtqr = ch.Dtq[:, :, :3, :3]
        dtqqr = ch.Dtqq[:, :, :, :3, :3]
        # theta-derivatives of the angular jacobian G and its q-derivative
        g_t = _vee_stack(np.einsum("aci,kcj->akij", dtr, d1r)
                         + np.einsum("ci,akcj->akij", r, dtqr))
        dg_t = _vee_stack(
            np.einsum("arci,kcj->akrij", dtqr, d1r)
            + np.einsum("aci,krcj->akrij", dtr, d2r)
            + np.einsum("rci,akcj->akrij", d1r, dtqr)
            + np.einsum("ci,akrcj->akrij", r, dtqqr)
        )
        p_t = ch.Dtq[:, :, :3, 3]
        dp_t = ch.Dtqq[:, :, :, :3, 3]

        # dM/dtheta_a [k,l]
        dm_t = (np.einsum("aki,i,li->akl", g_t, inert, g)
                + np.einsum("ki,i,ali->akl", g, inert, g_t)
                + mass * (np.einsum("akc,lc->akl", p_t, p)
                          + np.einsum("kc,alc->akl", p, p_t)))
        # dT/dtheta_a [k,l,r]
        dt_t = (np.einsum("akri,i,li->aklr", dg_t, inert, g)
                + np.einsum("kri,i,ali->aklr", dg, inert, g_t)
                + np.einsum("aki,i,lri->aklr", g_t, inert, dg)
                + np.einsum("ki,i,alri->aklr", g, inert, dg_t)
                + mass * (np.einsum("akrc,lc->aklr", dp_t, p)
                          + np.einsum("krc,alc->aklr", dp, p_t)
                          + np.einsum("akc,lrc->aklr", p_t, dp)
                          + np.einsum("kc,alrc->aklr", p, dp_t)))
        dc_t = np.einsum("aklr,l,r->ak", dt_t, v_loc, v_loc) \
            - 0.5 * np.einsum("alrk,l,r->ak", dt_t, v_loc, v_loc)
        dgrav_t = mass * np.einsum("akc,c->ak", p_t, grav)
        df_t = dgrav_t - dc_t
        vals = np.einsum("k,akl,l->a", lam_loc, dm_t, dv_loc) \
            - coef * np.einsum("k,ak->a", lam_loc, df_t)
        for a_local, a_fk in enumerate(ch.thetas):
            pid = scene.theta_fk_to_psip[a_fk]
            if pid >= 0:
                dl_dpsip[pid] += vals[a_local]

    # contact point/area/theta terms
    if scene.contact_pairs and scene.contact_scale != 0.0:
        for pair in scene.contact_pairs:
            fk_a = fkq[pair.body_a]
            fk_b = fkq[pair.body_b] if pair.body_b >= 0 else None
            fkt_a = fkt[pair.body_a]
            vjp_pts, vjp_areas, vjp_theta = pair_vjps(
                pair, fk_a, fk_b, fkt_a, v, scene.contact_scale, lam_full)
            fac = -coef
            if pair.psip_points is not None:
                for pi, base in enumerate(pair.psip_points):
                    if base >= 0:
                        dl_dpsip[base: base + 3] += fac * vjp_pts[pi]
            if pair.psip_areas is not None:
                valid = pair.psip_areas >= 0
                dl_dpsip[pair.psip_areas[valid]] += fac * vjp_areas[valid]
            for a_fk, val in vjp_theta.items():
                pid = scene.theta_fk_to_psip[a_fk]
                if pid >= 0:
                    dl_dpsip[pid] += fac * val


def backward(scene, traj, lp):
    """Gradients (dL/du, dL/dpsi_p) of a rollout via the discrete adjoint."""
    traj.require_records()
    model = scene.model
    dyn = scene.dynamic
    n_q = model.n_q
    n_states = len(traj.states)
    records = traj.records

    gq = np.array(lp.dl_dq, dtype=float, copy=True)
    gv = np.array(lp.dl_dv, dtype=float, copy=True)
    if gq.shape != (n_states, n_q) or gv.shape != (n_states, n_q):
        raise DimensionMismatch("loss partial shapes do not match trajectory")
    aux_gq = {}
    aux_gv = {}

    dl_du = np.array(lp.dl_du, dtype=float, copy=True)
    dl_dpsip = np.array(lp.dl_dpsip, dtype=float, copy=True)

    rebase_at = {ev.state_index: ev for ev in traj.rebases}

    # precompute Delta v per record from its parents (full vectors)
    for rec in records:
        vc = np.zeros(n_q)
        for ref, alpha in rec.parents:
            v_par = (records[ref[1]].v if isinstance(ref, tuple) and ref[0] == "aux"
                     else traj.states[ref].qdot)
            vc = vc + alpha * v_par
        rec._dv_full = rec.v - vc

    act_dyn = scene.actuation[dyn, :]

    for ri in range(len(records) - 1, -1, -1):
        rec = records[ri]
        if rec.state_index >= 0:
            g_q = gq[rec.state_index]
            g_v = gv[rec.state_index]
            ev = rebase_at.get(rec.state_index)
            if ev is not None:
                # children and loss saw the post-rebase chart; pull back
                gq_d = ev.jac_q.T @ g_q[dyn] + ev.jac_vq.T @ g_v[dyn]
                gv_d = ev.jac_vv.T @ g_v[dyn]
                g_q = g_q.copy()
                g_v = g_v.copy()
                g_q[dyn] = gq_d
                g_v[dyn] = gv_d
        else:
            g_q = aux_gq.get(ri, np.zeros(n_q))
            g_v = aux_gv.get(ri, np.zeros(n_q))

        ghat = g_v[dyn] + rec.coef * g_q[dyn]
        if not np.any(ghat) and not np.any(g_q[dyn]):
            continue
        lam = np.linalg.solve(rec.newton_K.T, -ghat)
        lam_full = np.zeros(n_q)
        lam_full[dyn] = lam

        # control
        dl_du[rec.u_segment] += -rec.coef * (act_dyn.T @ lam)

        # parents
        push_q = g_q[dyn] + rec.drho_dq.T @ lam
        push_v = -(rec.m_dd.T @ lam)
        for ref, alpha in rec.parents:
            if isinstance(ref, tuple) and ref[0] == "aux":
                tgt = ref[1]
                a_q = aux_gq.setdefault(tgt, np.zeros(n_q))
                a_v = aux_gv.setdefault(tgt, np.zeros(n_q))
                a_q[dyn] += alpha * push_q
                a_v[dyn] += alpha * push_v
            else:
                gq[ref][dyn] += alpha * push_q
                gv[ref][dyn] += alpha * push_v

        # design parameters
        if dl_dpsip.size:
            _theta_rho_vjp(scene, rec, lam_full, dl_dpsip, rec.coef)

    return dl_du, dl_dpsip


def chain_to_design(dl_dpsip, jac_p, jac_m, jac_h):
    """dL/dpsi_c from dL/dpsi_p via transpose-Jacobian-vector products.

    jac_p: d psi_p / d psi_M operator with .rmatvec; jac_m: d psi_M / d psi_h
    operator; jac_h: d psi_h / d psi_c operator.  None entries skip a stage
    (for parameterizations that bypass it, e.g. direct mesh vertices).
    """
    bar = np.asarray(dl_dpsip, dtype=float)
    for op in (jac_p, jac_m, jac_h):
        if op is None:
            continue
        bar = op.rmatvec(bar)
    return bar
