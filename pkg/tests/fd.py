"""Central finite-difference oracles used throughout the test suite.

These stay independent of the analytic-derivative code paths they check:
they only ever call the forward function being differentiated.
"""

import numpy as np


def fd_gradient(f, x, eps=1e-6):
    """Central-difference gradient of scalar f at x."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp.flat[i] += eps
        xm.flat[i] -= eps
        g.flat[i] = (f(xp) - f(xm)) / (2.0 * eps)
    return g


def fd_jacobian(f, x, eps=1e-6):
    """Central-difference Jacobian of vector-valued f at x; shape (|f|, |x|)."""
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(f(x), dtype=float)
    jac = np.zeros((f0.size, x.size))
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp.flat[i] += eps
        xm.flat[i] -= eps
        jac[:, i] = (np.asarray(f(xp)).ravel() - np.asarray(f(xm)).ravel()) / (2.0 * eps)
    return jac


def rel_err(approx, exact, floor=1e-12):
    """Worst-case elementwise relative error with an absolute floor."""
    approx = np.asarray(approx, dtype=float)
    exact = np.asarray(exact, dtype=float)
    scale = np.maximum(np.abs(exact), max(floor, 1e-3 * np.abs(exact).max(initial=0.0)))
    return np.max(np.abs(approx - exact) / scale) if approx.size else 0.0
