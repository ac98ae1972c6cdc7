"""Reduced-coordinate articulated rigid-body dynamics, implicitly integrated.

The equations of motion are assembled in Lagrangian form from the COM-frame
body Jacobians: M(q) qdd + c(q, qd) = tau(q, qd, u) with the quadratic
velocity vector derived from dM/dq.  Time stepping is BDF2 with an SDIRK2
startup step; each step solves the velocity-form residual

    rho(v+) = M(q+) (v+ - vc) - coef * f(q+, v+, u),   q+ = qc + coef v+

with Newton's method (exact Jacobian, Armijo backtracking).  Each step's
final Newton matrix and force Jacobians are retained so the backward pass
can reuse them in a block-banded triangular solve.

Free-joint rotations use exponential coordinates; whenever a rotation vector
leaves the well-conditioned chart (norm > pi/2), the rotation is folded
into a per-joint base rotation, histories are remapped through the chart
change, and integration restarts with SDIRK2.  Chart-change Jacobians are
recorded so the backward pass can differentiate through the event.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import contact as contact_mod
from . import fk, so3
from .errors import MissingRecords, NewtonDivergence, SingularMassMatrix

SDIRK_GAMMA = 1.0 - math.sqrt(0.5)
NEWTON_TOL = 1e-9
NEWTON_MAX_ITER = 50
ARMIJO_C = 1e-4
REBASE_LIMIT = math.pi / 2.0


@dataclass
class SimState:
    q: np.ndarray
    qdot: np.ndarray
    t: float

    def copy(self):
        return SimState(self.q.copy(), self.qdot.copy(), self.t)


@dataclass
class ControlSequence:
    """Normalized torques in [-1, 1]: (n_segments, n_act), each held n_ctrl steps."""

    torques: np.ndarray
    n_ctrl: int

    def __post_init__(self):
        self.torques = np.asarray(self.torques, dtype=float)
        if self.torques.ndim != 2:
            raise ValueError("torques must be (n_segments, n_act)")
        if np.max(np.abs(self.torques), initial=0.0) > 1.0 + 1e-12:
            raise ValueError("normalized torques must lie in [-1, 1]")

    def segment(self, step_index):
        """Control segment applied during step `step_index` (0-based)."""
        return self.torques[step_index // self.n_ctrl]

    def segment_index(self, step_index):
        return step_index // self.n_ctrl


class Scene:
    """Simulation-ready articulated scene.

    Carries the kinematic model, per-dof damping, actuation map, gravity,
    contact pairs, prescribed-motion schedules, and the bookkeeping that maps
    structural parameters (joint/body origins, COM offsets, masses, inertias,
    contact points/areas) into the flat simulation-parameter vector psi_p.
    """

    def __init__(self, model, gravity=(0.0, 0.0, -9.81), n_psip=0):
        self.model = model
        self.gravity = np.asarray(gravity, dtype=float)
        self.n_psip = n_psip
        n_q = model.n_q
        self.damping = np.zeros(n_q)
        self.actuation = np.zeros((n_q, 0))
        self.contact_pairs = []
        self.contact_scale = 1.0
        self.dynamic = np.ones(n_q, dtype=bool)
        self.prescribed = []            # (joint_index, schedule(t)->(q, qd, qdd))
        # psi_p bookkeeping
        self.theta_fk_to_psip = np.zeros(0, dtype=int)      # fk-theta slot -> psi_p idx
        self.body_mass_psip = {}        # body index -> psi_p idx
        self.body_inertia_psip = {}     # body index -> (3,) psi_p idx of diag entries
        self.dt = 1e-2
        self.n_t = 0

    # -- wiring helpers -------------------------------------------------------

    def set_actuation(self, entries):
        """entries: list of (dof index, torque_limit)."""
        self.actuation = np.zeros((self.model.n_q, len(entries)))
        for col, (dof, limit) in enumerate(entries):
            self.actuation[dof, col] = limit

    def add_prescribed(self, joint_index, schedule):
        j = self.model.joints[joint_index]
        self.prescribed.append((joint_index, schedule))
        self.dynamic[j.dof_start: j.dof_start + j.n_dof] = False

    @property
    def n_act(self):
        return self.actuation.shape[1]

    @property
    def n_dyn(self):
        return int(np.count_nonzero(self.dynamic))

    def prescribed_values(self, t):
        q = np.zeros(self.model.n_q)
        qd = np.zeros(self.model.n_q)
        qdd = np.zeros(self.model.n_q)
        for ji, sched in self.prescribed:
            j = self.model.joints[ji]
            sl = slice(j.dof_start, j.dof_start + j.n_dof)
            q[sl], qd[sl], qdd[sl] = sched(t)
        return q, qd, qdd

    def merge_prescribed(self, x_dyn, t, arrays=None):
        q_pres, qd_pres, _ = self.prescribed_values(t) if arrays is None else arrays
        return q_pres, qd_pres


# ---------------------------------------------------------------------------
# Lagrangian assembly


class Assembly:
    """Mass matrix, generalized force, and their derivatives at (q, v)."""

    __slots__ = ("M", "f", "T", "df_dq", "df_dv", "fkq", "n_medial")

    def __init__(self, scene, q, v, u_phys, order=1, contact_scale=None):
        model = scene.model
        n = model.n_q
        free_base = getattr(scene, "_free_base", None)
        fkq = fk.fk_q(model, q, free_base, order=3 if order >= 1 else 2)
        self.fkq = fkq
        scale = scene.contact_scale if contact_scale is None else contact_scale

        m_mat = np.zeros((n, n))
        tten = np.zeros((n, n, n))
        grav = np.zeros(n)
        dgrav = np.zeros((n, n))
        cvec = np.zeros(n)
        dc_dq = np.zeros((n, n))
        dc_dv = np.zeros((n, n))

        for body, bfk in zip(model.bodies, fkq):
            if body.mass == 0.0:
                continue
            idx = np.asarray(bfk.dofs, dtype=int)
            if idx.size == 0:
                continue
            order_g = 3 if order >= 1 else 2
            g, p, dg, dp, d2g, d2p = fk.body_jacobians(bfk, order=order_g)
            inert = body.inertia
            mass = body.mass
            vloc = v[idx]

            m_loc = np.einsum("ki,i,li->kl", g, inert, g) + mass * (p @ p.T)
            m_mat[np.ix_(idx, idx)] += m_loc

            # T[k, l, r] = dM_kl/dq_r
            t_loc = (np.einsum("kri,i,li->klr", dg, inert, g)
                     + np.einsum("ki,i,lri->klr", g, inert, dg)
                     + mass * (np.einsum("kra,la->klr", dp, p)
                               + np.einsum("ka,lra->klr", p, dp)))
            tten[np.ix_(idx, idx, idx)] += t_loc

            grav[idx] += mass * (p @ scene.gravity)
            dgrav[np.ix_(idx, idx)] += mass * np.einsum("kla,a->kl", dp, scene.gravity)

            c_loc = np.einsum("klr,l,r->k", t_loc, vloc, vloc) \
                - 0.5 * np.einsum("lrk,l,r->k", t_loc, vloc, vloc)
            cvec[idx] += c_loc
            dc_dv_loc = (np.einsum("kmr,r->km", t_loc, vloc)
                         + np.einsum("krm,r->km", t_loc, vloc)
                         - np.einsum("mrk,r->km", t_loc, vloc))
            dc_dv[np.ix_(idx, idx)] += dc_dv_loc

            if order >= 1:
                # dT[k, l, r, s] = d2M_kl / dq_r dq_s
                dt_loc = (
                    np.einsum("krsi,i,li->klrs", d2g, inert, g)
                    + np.einsum("kri,i,lsi->klrs", dg, inert, dg)
                    + np.einsum("ksi,i,lri->klrs", dg, inert, dg)
                    + np.einsum("ki,i,lrsi->klrs", g, inert, d2g)
                    + mass * (np.einsum("krsa,la->klrs", d2p, p)
                              + np.einsum("kra,lsa->klrs", dp, dp)
                              + np.einsum("ksa,lra->klrs", dp, dp)
                              + np.einsum("ka,lrsa->klrs", p, d2p))
                )
                dc_dq_loc = np.einsum("klrs,l,r->ks", dt_loc, vloc, vloc) \
                    - 0.5 * np.einsum("lrks,l,r->ks", dt_loc, vloc, vloc)
                dc_dq[np.ix_(idx, idx)] += dc_dq_loc

        self.M = m_mat
        self.T = tten

        f = grav - scene.damping * v - cvec
        if scene.actuation.shape[1] and u_phys is not None:
            f = f + scene.actuation @ u_phys
        df_dq = None
        df_dv = None
        if order >= 1:
            df_dq = dgrav - dc_dq
            df_dv = -np.diag(scene.damping) - dc_dv

        self.n_medial = 0
        if scene.contact_pairs and scale != 0.0:
            for pair in scene.contact_pairs:
                fc, dfc_dq, dfc_dv, nmed = contact_mod.assemble_pair(
                    pair, fkq, q, v, scale, order=order)
                f = f + fc
                self.n_medial += nmed
                if order >= 1:
                    df_dq = df_dq + dfc_dq
                    df_dv = df_dv + dfc_dv
        self.f = f
        self.df_dq = df_dq
        self.df_dv = df_dv


def forward_dynamics(scene, state, u_norm=None):
    """Generalized acceleration of the dynamic dofs at a state.

    Solves M qdd = f on the dynamic partition, accounting for prescribed-dof
    accelerations through the mass-matrix coupling.
    """
    q = state.q
    v = state.qdot
    u_phys = u_norm if u_norm is not None else np.zeros(scene.n_act)
    asm = Assembly(scene, q, v, u_phys, order=0)
    dyn = scene.dynamic
    m_dd = asm.M[np.ix_(dyn, dyn)]
    cond = np.linalg.cond(m_dd)
    if cond > 1e12:
        raise SingularMassMatrix(f"mass matrix condition {cond:.3e}")
    rhs = asm.f[dyn]
    if not dyn.all():
        _, _, qdd_pres = scene.prescribed_values(state.t)
        rhs = rhs - asm.M[np.ix_(dyn, ~dyn)] @ qdd_pres[~dyn]
    acc = np.zeros(scene.model.n_q)
    acc[dyn] = np.linalg.solve(m_dd, rhs)
    if not dyn.all():
        _, _, qdd_pres = scene.prescribed_values(state.t)
        acc[~dyn] = qdd_pres[~dyn]
    return acc


# ---------------------------------------------------------------------------
# implicit step records


@dataclass
class StepRecord:
    kind: str                      # 'sdirk1' | 'sdirk2' | 'bdf2'
    state_index: int               # index of the state this record produces (-1: aux)
    parents: list                  # (state_index or ('aux', rec_idx), alpha)
    coef: float                    # gamma*h or (2/3)*h multiplying f and v+
    t_new: float
    u_segment: int
    q: np.ndarray                  # converged full coordinates
    v: np.ndarray
    newton_K: np.ndarray           # (m, m) reduced Newton matrix (stored factors)
    drho_dq: np.ndarray            # (m, m) d rho / d q+ (dynamic block)
    m_dd: np.ndarray               # (m, m) mass matrix dynamic block at q+
    free_base: np.ndarray          # chart bases active for this record


@dataclass
class RebaseEvent:
    state_index: int
    jac_q: np.ndarray              # (m, m) d q'_dyn / d q_dyn
    jac_vq: np.ndarray             # (m, m) d v' / d q
    jac_vv: np.ndarray             # (m, m) d v' / d v


@dataclass
class Trajectory:
    states: list                   # SimState, length n_t + 1
    free_bases: list               # (n_free, 3, 3) chart base per state
    records: list                  # StepRecord, or None when not retained
    rebases: list = field(default_factory=list)
    n_medial_total: int = 0

    def require_records(self):
        if self.records is None:
            raise MissingRecords("trajectory was produced without adjoint records")


def _solve_step(scene, kind, q_hist, v_hist, alphas, coef, t_new, u_phys,
                newton_tol, step_index):
    """Newton solve of the velocity-form implicit residual.

    q_hist/v_hist: list of full history vectors matching `alphas`.
    Returns (q_full, v_full, K, drho_dq, M_dd).
    """
    model = scene.model
    dyn = scene.dynamic
    n = model.n_q
    q_pres, v_pres, _ = scene.prescribed_values(t_new)

    qc = sum(a * qh for a, qh in zip(alphas, q_hist))
    vc = sum(a * vh for a, vh in zip(alphas, v_hist))

    v_full = v_hist[0].copy()
    v_full[~dyn] = v_pres[~dyn]

    def build_q(v_full_):
        q_full = qc + coef * v_full_
        q_full[~dyn] = q_pres[~dyn]
        return q_full

    res = np.inf
    for it in range(NEWTON_MAX_ITER):
        q_full = build_q(v_full)
        asm = Assembly(scene, q_full, v_full, u_phys, order=1)
        dv_full = v_full - vc
        dv_full[~dyn] = v_pres[~dyn] - vc[~dyn]
        rho_full = asm.M @ dv_full - coef * asm.f
        rho = rho_full[dyn]
        res = np.max(np.abs(rho)) if rho.size else 0.0
        if res < newton_tol:
            drho_dq = (np.einsum("ijk,j->ik", asm.T, dv_full)
                       - coef * asm.df_dq)[np.ix_(dyn, dyn)]
            m_dd = asm.M[np.ix_(dyn, dyn)]
            k_mat = m_dd - coef * asm.df_dv[np.ix_(dyn, dyn)] + coef * drho_dq
            return q_full, v_full, k_mat, drho_dq, m_dd

        drho_dq_full = np.einsum("ijk,j->ik", asm.T, dv_full) - coef * asm.df_dq
        k_mat = (asm.M - coef * asm.df_dv + coef * drho_dq_full)[np.ix_(dyn, dyn)]
        try:
            delta = np.linalg.solve(k_mat, -rho)
        except np.linalg.LinAlgError:
            k_reg = k_mat + 1e-10 * np.eye(k_mat.shape[0])
            delta = np.linalg.solve(k_reg, -rho)

        merit0 = 0.5 * float(rho @ rho)
        step = 1.0
        v_try = v_full.copy()
        for _ in range(30):
            v_try[dyn] = v_full[dyn] + step * delta
            q_try = build_q(v_try)
            asm_t = Assembly(scene, q_try, v_try, u_phys, order=0)
            dv_t = v_try - vc
            dv_t[~dyn] = v_pres[~dyn] - vc[~dyn]
            rho_t = (asm_t.M @ dv_t - coef * asm_t.f)[dyn]
            merit_t = 0.5 * float(rho_t @ rho_t)
            if np.isfinite(merit_t) and merit_t <= merit0 * (1.0 - 2.0 * ARMIJO_C * step) + 1e-300:
                break
            step *= 0.5
        v_full = v_try
    raise NewtonDivergence(
        f"Newton failed at step {step_index} ({kind}): residual {res:.3e}",
        step_index=step_index)


REBASE_QUANTUM = 0.25  # rad, per-component grid of the fold rotation


def _check_rebase(scene, q, v, free_base):
    """Fold a quantized part of large free-joint rotation vectors into the base.

    The fold rotation is exp(round(w / eta) * eta): locally constant under
    state perturbations, so the executed discrete scheme stays differentiable
    and the recorded chart-change Jacobians make the adjoint exact.  Returns
    (q', v', base', jac blocks) or None when no joint needs it.
    """
    model = scene.model
    triggered = []
    for ji in model.free_joints:
        j = model.joints[ji]
        w = q[j.dof_start + 3: j.dof_start + 6]
        if np.linalg.norm(w) > REBASE_LIMIT:
            triggered.append(ji)
    if not triggered:
        return None
    n = model.n_q
    q_new = q.copy()
    v_new = v.copy()
    base_new = free_base.copy()
    jq = np.eye(n)
    jvq = np.zeros((n, n))
    jvv = np.eye(n)
    for ji in triggered:
        j = model.joints[ji]
        sl = slice(j.dof_start + 3, j.dof_start + 6)
        w = q[sl]
        wd = v[sl]
        c_fold = np.round(w / REBASE_QUANTUM) * REBASE_QUANTUM
        fold = so3.exp_so3(c_fold)
        base_new[j.free_index] = base_new[j.free_index] @ fold
        w_post = so3.log_so3(fold.T @ so3.exp_so3(w))
        jr_w = so3.right_jacobian(w)
        jr_p = so3.right_jacobian(w_post)
        b_mat = np.linalg.solve(jr_p, jr_w)       # d w_post / d w
        v_post = b_mat @ wd
        q_new[sl] = w_post
        v_new[sl] = v_post
        jq[sl, sl] = b_mat
        jvv[sl, sl] = b_mat
        # d v_post / d w: B(w) = J_r(w_post(w))^{-1} J_r(w) varies through
        # both arguments; the chain through w_post uses B itself.
        d_post = so3.right_jacobian_deriv(w_post)
        d_w = so3.right_jacobian_deriv(w)
        block = np.empty((3, 3))
        for i in range(3):
            dj_post = np.einsum("j,jab->ab", b_mat[:, i], d_post)
            block[:, i] = np.linalg.solve(
                jr_p, d_w[i] @ wd - dj_post @ v_post)
        jvq[sl, sl] = block
    dyn = scene.dynamic
    return (q_new, v_new, base_new,
            jq[np.ix_(dyn, dyn)], jvq[np.ix_(dyn, dyn)], jvv[np.ix_(dyn, dyn)])


def step(scene, state, u_norm, history=None, newton_tol=NEWTON_TOL, step_index=0):
    """Single time step used by tests; rollout() drives the same machinery."""
    h = scene.dt
    u_phys = np.asarray(u_norm, dtype=float)
    if history is None:
        q1, v1 = _sdirk_step(scene, state.q, state.qdot, state.t, u_phys,
                             newton_tol, step_index)[0:2]
        return SimState(q1, v1, state.t + h)
    q_prev, v_prev = history
    alphas = (4.0 / 3.0, -1.0 / 3.0)
    coef = 2.0 / 3.0 * h
    q_full, v_full, *_ = _solve_step(
        scene, "bdf2", [state.q, q_prev], [state.qdot, v_prev], alphas, coef,
        state.t + h, u_phys, newton_tol, step_index)
    return SimState(q_full, v_full, state.t + h)


def _sdirk_step(scene, q0, v0, t0, u_phys, newton_tol, step_index):
    """SDIRK2 startup step; returns (q1, v1, rec_stage, rec_out)."""
    h = scene.dt
    gam = SDIRK_GAMMA
    qs, vs, k_s, dq_s, m_s = _solve_step(
        scene, "sdirk1", [q0], [v0], (1.0,), gam * h, t0 + gam * h, u_phys,
        newton_tol, step_index)
    c2 = (1.0 - gam) / gam
    alphas = (1.0 - c2, c2)
    q1, v1, k_o, dq_o, m_o = _solve_step(
        scene, "sdirk2", [q0, qs], [v0, vs], alphas, gam * h, t0 + h, u_phys,
        newton_tol, step_index)
    return q1, v1, (qs, vs, k_s, dq_s, m_s), (k_o, dq_o, m_o)


def rollout(scene, initial, controls, retain_records=True, newton_tol=NEWTON_TOL):
    """Integrate n_t steps; per-step adjoint records retained by default."""
    model = scene.model
    h = scene.dt
    n_t = scene.n_t
    free_base = model.identity_free_base()
    if getattr(initial, "free_base", None) is not None:
        free_base = initial.free_base.copy()

    states = [initial.copy()]
    free_bases = [free_base.copy()]
    records = [] if retain_records else None
    rebases = []
    n_medial = 0

    # `restart` marks that the next step must use SDIRK2 (start or post-rebase)
    restart = True
    scene._free_base = free_base

    for k in range(n_t):
        t0 = initial.t + k * h
        u_seg = controls.segment(k)
        u_idx = controls.segment_index(k)
        u_phys = u_seg
        q_n = states[-1].q
        v_n = states[-1].qdot

        if restart:
            gam = SDIRK_GAMMA
            qs, vs, ks, dqs, ms = _solve_step(
                scene, "sdirk1", [q_n], [v_n], (1.0,), gam * h, t0 + gam * h,
                u_phys, newton_tol, k + 1)
            c2 = (1.0 - gam) / gam
            q1, v1, ko, dqo, mo = _solve_step(
                scene, "sdirk2", [q_n, qs], [v_n, vs], (1.0 - c2, c2), gam * h,
                t0 + h, u_phys, newton_tol, k + 1)
            if retain_records:
                aux_index = len(records)
                records.append(StepRecord(
                    "sdirk1", -1, [(k, 1.0)], gam * h, t0 + gam * h, u_idx,
                    qs, vs, ks, dqs, ms, free_base.copy()))
                records.append(StepRecord(
                    "sdirk2", k + 1, [(k, 1.0 - c2), (("aux", aux_index), c2)],
                    gam * h, t0 + h, u_idx, q1, v1, ko, dqo, mo, free_base.copy()))
            restart = False
        else:
            q_p = states[-2].q
            v_p = states[-2].qdot
            coef = 2.0 / 3.0 * h
            q1, v1, ko, dqo, mo = _solve_step(
                scene, "bdf2", [q_n, q_p], [v_n, v_p], (4.0 / 3.0, -1.0 / 3.0),
                coef, t0 + h, u_phys, newton_tol, k + 1)
            if retain_records:
                records.append(StepRecord(
                    "bdf2", k + 1, [(k, 4.0 / 3.0), (k - 1, -1.0 / 3.0)],
                    coef, t0 + h, u_idx, q1, v1, ko, dqo, mo, free_base.copy()))

        states.append(SimState(q1, v1, t0 + h))
        free_bases.append(free_base.copy())

        reb = _check_rebase(scene, q1, v1, free_base)
        if reb is not None:
            q_new, v_new, base_new, jq, jvq, jvv = reb
            states[-1] = SimState(q_new, v_new, t0 + h)
            free_base = base_new
            scene._free_base = free_base
            free_bases[-1] = free_base.copy()
            rebases.append(RebaseEvent(k + 1, jq, jvq, jvv))
            restart = True

    scene._free_base = None
    traj = Trajectory(states, free_bases, records, rebases)
    return traj


def export_csv(traj, path):
    n_q = traj.states[0].q.shape[0]
    with open(path, "w", encoding="utf-8") as fh:
        cols = ["t"] + [f"q{i}" for i in range(n_q)] + [f"qd{i}" for i in range(n_q)]
        fh.write(",".join(cols) + "\n")
        for s in traj.states:
            row = [f"{s.t:.12g}"] + [f"{x:.17g}" for x in s.q] + [f"{x:.17g}" for x in s.qdot]
            fh.write(",".join(row) + "\n")
