"""Hand-built test scenes used across the dynamics/contact/adjoint tests."""

import numpy as np

from diffcodesign import fk, sdf
from diffcodesign.contact import ContactMaterial, ContactPair
from diffcodesign.dynamics import Scene, SimState
from diffcodesign.fk import Body, Joint, transform


def pendulum_scene(length=1.0, mass=0.5, inertia=None, damping=0.0, dt=5e-3,
                   torque_limit=1.0, gravity=(0, 0, -9.81)):
    """Single revolute joint about +Y; COM hangs `length` below the pivot at q=0."""
    if inertia is None:
        inertia = np.array([1e-12, 1e-12, 1e-12])  # point-mass limit
    joints = [Joint("pivot", -1, fk.JOINT_REVOLUTE, np.eye(4),
                    axis=np.array([0.0, 1.0, 0.0]), actuated=True,
                    damping=damping, torque_limit=torque_limit)]
    bodies = [Body("bob", 0, np.eye(4), com=np.array([0.0, 0.0, -length]),
                   mass=mass, inertia=np.asarray(inertia, dtype=float))]
    model = fk.KinematicModel(joints, bodies)
    scene = Scene(model, gravity=gravity)
    scene.damping[0] = damping
    scene.set_actuation([(0, torque_limit)])
    scene.dt = dt
    return scene


def chain_scene(n_links, seed=0, damping=0.02, dt=5e-3, gravity=(0, 0, -9.81)):
    """1-3 link serial chain with randomized offsets, axes, and inertia."""
    rng = np.random.default_rng(seed)
    joints = []
    bodies = []
    for i in range(n_links):
        axis = rng.standard_normal(3)
        axis /= np.linalg.norm(axis)
        off = rng.uniform(-0.1, 0.1, 3) + (np.array([0.25, 0, 0]) if i else np.zeros(3))
        joints.append(Joint(f"j{i}", i - 1, fk.JOINT_REVOLUTE,
                            transform(translation=off), axis=axis, actuated=True,
                            damping=damping, torque_limit=1.0))
        com = rng.uniform(-0.05, 0.05, 3) + np.array([0.12, 0.0, 0.0])
        inertia = rng.uniform(1e-4, 8e-4, 3)
        bodies.append(Body(f"b{i}", i, transform(translation=rng.uniform(-0.02, 0.02, 3)),
                           com=com, mass=rng.uniform(0.2, 0.8),
                           inertia=inertia))
    model = fk.KinematicModel(joints, bodies)
    scene = Scene(model, gravity=gravity)
    for i in range(n_links):
        scene.damping[i] = damping
    scene.set_actuation([(i, 1.0) for i in range(n_links)])
    scene.dt = dt
    return scene


def free_body_scene(mass=0.5, inertia=(2e-3, 3e-3, 4e-3), gravity=(0, 0, 0), dt=5e-3):
    joints = [Joint("free", -1, fk.JOINT_FREE, np.eye(4))]
    bodies = [Body("obj", 0, np.eye(4), com=np.zeros(3), mass=mass,
                   inertia=np.asarray(inertia, dtype=float))]
    model = fk.KinematicModel(joints, bodies)
    scene = Scene(model, gravity=gravity)
    scene.set_actuation([])
    scene.dt = dt
    return scene


def falling_block_scene(mass=1.0, half=0.05, k_n=None, k_d=None, mu=0.8,
                        dt=5e-3, corner_points=True, gravity=(0, 0, -9.81)):
    """Free box above the ground plane; contact on its 4 (or 8) corners.

    Total bottom-face area is spread over the corner points so that
    sum(a) * k_n reproduces the analytic resting penetration mg/(a_tot k_n).
    """
    scene = free_body_scene(mass=mass,
                            inertia=np.full(3, mass * (2 * half) ** 2 / 6.0),
                            gravity=gravity, dt=dt)
    pts = []
    for sx in (-1, 1):
        for sy in (-1, 1):
            pts.append([sx * half, sy * half, -half])
            if corner_points:
                pts.append([sx * half, sy * half, half])
    pts = np.asarray(pts, dtype=float)
    area_tot = (2 * half) ** 2
    areas = np.full(len(pts), area_tot / 4.0)
    areas[[i for i in range(len(pts)) if pts[i, 2] > 0]] = area_tot / 4.0
    mat = ContactMaterial()
    if k_n is not None:
        mat.k_n = k_n
    if k_d is not None:
        mat.k_d = k_d
    mat.mu = mu
    pair = ContactPair(body_a=0, points=pts, areas=areas,
                       sdf=sdf.PlaneSDF((0, 0, 1.0), 0.0), body_b=-1,
                       b_frame=np.eye(4), material=mat, label="block-ground")
    scene.contact_pairs.append(pair)
    return scene


def initial_state(scene, q=None, qdot=None, t=0.0):
    n = scene.model.n_q
    return SimState(np.zeros(n) if q is None else np.asarray(q, dtype=float),
                    np.zeros(n) if qdot is None else np.asarray(qdot, dtype=float), t)
