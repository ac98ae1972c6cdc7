"""Rotation utilities: exponential coordinates with derivatives up to third order.

The rotation is written as R(w) = I + a(s) K + b(s) K^2 with K = hat(w) and
s = |w|^2.  The scalar coefficients a(s) = sin(t)/t and b(s) = (1 - cos(t))/t^2
(t = |w|) are analytic in s, which makes every derivative below well defined
at w = 0; near zero they are evaluated from their Taylor series in s.
"""

import math

import numpy as np

_EYE3 = np.eye(3)

# Basis of skew generators: _GEN[i] = hat(e_i).
_GEN = np.zeros((3, 3, 3))
_GEN[0, 1, 2] = -1.0
_GEN[0, 2, 1] = 1.0
_GEN[1, 0, 2] = 1.0
_GEN[1, 2, 0] = -1.0
_GEN[2, 0, 1] = -1.0
_GEN[2, 1, 0] = 1.0

_SERIES_CUTOFF = 1e-2
_SERIES_TERMS = 8

# Taylor coefficients in s: a = sum (-1)^k s^k/(2k+1)!, b = .../(2k+2)!,
# c = (t - sin t)/t^3 = sum (-1)^k s^k/(2k+3)!.
_A_COEF = [(-1.0) ** k / math.factorial(2 * k + 1) for k in range(_SERIES_TERMS + 4)]
_B_COEF = [(-1.0) ** k / math.factorial(2 * k + 2) for k in range(_SERIES_TERMS + 4)]
_C_COEF = [(-1.0) ** k / math.factorial(2 * k + 3) for k in range(_SERIES_TERMS + 4)]


def _series_deriv(coefs, s, order):
    """order-th derivative of sum coefs[k] s^k, truncated."""
    total = 0.0
    p = 1.0
    for k in range(order, order + _SERIES_TERMS):
        fact = 1.0
        for j in range(order):
            fact *= k - j
        total += coefs[k] * fact * p
        p *= s
    return total


def _coef_a(s, order):
    if s < _SERIES_CUTOFF:
        return _series_deriv(_A_COEF, s, order)
    t = math.sqrt(s)
    sn, cs = math.sin(t), math.cos(t)
    if order == 0:
        return sn / t
    if order == 1:
        return cs / (2 * t**2) - sn / (2 * t**3)
    if order == 2:
        return (-1 / (4 * t**3) + 3 / (4 * t**5)) * sn - 3 * cs / (4 * t**4)
    return (3 / (4 * t**5) - 15 / (8 * t**7)) * sn + (-1 / (8 * t**4) + 15 / (8 * t**6)) * cs


def _coef_b(s, order):
    if s < _SERIES_CUTOFF:
        return _series_deriv(_B_COEF, s, order)
    t = math.sqrt(s)
    sn, cs = math.sin(t), math.cos(t)
    if order == 0:
        return (1.0 - cs) / t**2
    if order == 1:
        return sn / (2 * t**3) + cs / t**4 - 1 / t**4
    if order == 2:
        return (1 / (4 * t**4) - 2 / t**6) * cs - 5 * sn / (4 * t**5) + 2 / t**6
    return (-9 / (8 * t**6) + 6 / t**8) * cs + (-1 / (8 * t**5) + 33 / (8 * t**7)) * sn - 6 / t**8


def _coef_c(s, order):
    if s < _SERIES_CUTOFF:
        return _series_deriv(_C_COEF, s, order)
    t = math.sqrt(s)
    sn, cs = math.sin(t), math.cos(t)
    if order == 0:
        return 1 / t**2 - sn / t**3
    if order == 1:
        return -cs / (2 * t**4) - 1 / t**4 + 3 * sn / (2 * t**5)
    if order == 2:
        return (1 / (4 * t**5) - 15 / (4 * t**7)) * sn + 7 * cs / (4 * t**6) + 2 / t**6
    raise ValueError("cderivatives above order 2 not needed")


def hat(w):
    """Skew-symmetric matrix of a 3-vector."""
    return np.array([
        [0.0, -w[2], w[1]],
        [w[2], 0.0, -w[0]],
        [-w[1], w[0], 0.0],
    ])


def vee(m):
    """Inverse of hat for a skew-symmetric matrix."""
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def exp_so3(w):
    w = np.asarray(w, dtype=float)
    s = float(w @ w)
    k = hat(w)
    return _EYE3 + _coef_a(s, 0) * k + _coef_b(s, 0) * (k @ k)


def exp_so3_derivs(w, order=1):
    """Rotation matrix and derivatives w.r.t. exponential coordinates.

    Returns (R, D1, D2, D3) where D1[i] = dR/dw_i, D2[i, j] = d2R/dw_i dw_j,
    D3[i, j, k] likewise; entries above `order` are None.
    """
    w = np.asarray(w, dtype=float)
    s = float(w @ w)
    k = hat(w)
    k2 = k @ k
    a = [_coef_a(s, j) for j in range(4)]
    b = [_coef_b(s, j) for j in range(4)]
    r = _EYE3 + a[0] * k + b[0] * k2

    # dK/dw_i = G_i is constant; d(K^2)/dw_i = G_i K + K G_i.
    gk = np.einsum("iab,bc->iac", _GEN, k)
    kg = np.einsum("ab,ibc->iac", k, _GEN)
    dk2 = gk + kg

    d1 = (2.0 * a[1]) * w[:, None, None] * k + a[0] * _GEN \
        + (2.0 * b[1]) * w[:, None, None] * k2 + b[0] * dk2
    if order < 2:
        return r, d1, None, None

    eye = np.eye(3)
    ww = np.multiply.outer(w, w)
    # d2(K^2)/dw_i dw_j = G_i G_j + G_j G_i.
    gg = np.einsum("iab,jbc->ijac", _GEN, _GEN)
    ggs = gg + gg.transpose(1, 0, 2, 3)

    ca = 4.0 * a[2] * ww + 2.0 * a[1] * eye
    cb = 4.0 * b[2] * ww + 2.0 * b[1] * eye
    d2 = (
        ca[:, :, None, None] * k
        + 2.0 * a[1] * (w[:, None, None, None] * _GEN[None, :] + w[None, :, None, None] * _GEN[:, None])
        + cb[:, :, None, None] * k2
        + 2.0 * b[1] * (w[:, None, None, None] * dk2[None, :] + w[None, :, None, None] * dk2[:, None])
        + b[0] * ggs
    )
    if order < 3:
        return r, d1, d2, None

    # Third derivative, mechanical expansion of d/dw_k of d2.
    d3 = np.zeros((3, 3, 3, 3, 3))
    dca = (
        8.0 * a[3] * np.einsum("i,j,k->ijk", w, w, w)
        + 4.0 * a[2] * (np.einsum("ik,j->ijk", eye, w) + np.einsum("jk,i->ijk", eye, w)
                        + np.einsum("ij,k->ijk", eye, w))
    )
    dcb = (
        8.0 * b[3] * np.einsum("i,j,k->ijk", w, w, w)
        + 4.0 * b[2] * (np.einsum("ik,j->ijk", eye, w) + np.einsum("jk,i->ijk", eye, w)
                        + np.einsum("ij,k->ijk", eye, w))
    )
    d3 += dca[:, :, :, None, None] * k
    d3 += np.einsum("ij,kab->ijkab", ca, _GEN)
    d3 += 4.0 * a[2] * (np.einsum("k,i,jab->ijkab", w, w, _GEN) + np.einsum("k,j,iab->ijkab", w, w, _GEN))
    d3 += 2.0 * a[1] * (np.einsum("ik,jab->ijkab", eye, _GEN) + np.einsum("jk,iab->ijkab", eye, _GEN))
    d3 += dcb[:, :, :, None, None] * k2
    d3 += np.einsum("ij,kab->ijkab", cb, dk2)
    d3 += 4.0 * b[2] * (np.einsum("k,i,jab->ijkab", w, w, dk2) + np.einsum("k,j,iab->ijkab", w, w, dk2))
    d3 += 2.0 * b[1] * (np.einsum("ik,jab->ijkab", eye, dk2) + np.einsum("jk,iab->ijkab", eye, dk2))
    # d/dw_k of b0*(G_i G_j + G_j G_i) and the cross terms with dk2 arguments:
    gg_k = np.einsum("iab,kbc->ikac", _GEN, _GEN)  # G_i G_k
    d3 += 2.0 * b[1] * (np.einsum("i,jkab->ijkab", w, gg_k + gg_k.transpose(1, 0, 2, 3))
                        + np.einsum("j,ikab->ijkab", w, gg_k + gg_k.transpose(1, 0, 2, 3)))
    d3 += 2.0 * b[1] * np.einsum("k,ijab->ijkab", w, ggs)
    return r, d1, d2, d3


def log_so3(r):
    """Rotation vector of a rotation matrix (angle < pi assumed well inside)."""
    c = (np.trace(r) - 1.0) * 0.5
    c = min(1.0, max(-1.0, c))
    theta = math.acos(c)
    if theta < 1e-10:
        return vee(r - r.T) * 0.5
    if theta > math.pi - 1e-6:
        # Fall back to the symmetric construction near pi.
        aa = (r + np.eye(3)) * 0.5
        diag = np.sqrt(np.maximum(np.diagonal(aa + np.eye(3) * 0.0), 0.0))
        # dominant axis from largest diagonal of (R + I)/2
        i = int(np.argmax(np.diagonal(aa)))
        axis = np.array([aa[i, 0], aa[i, 1], aa[i, 2]])
        axis = axis / max(np.linalg.norm(axis), 1e-30) * math.copysign(1.0, 1.0)
        _ = diag
        return axis * theta
    return vee(r - r.T) * (theta / (2.0 * math.sin(theta)))


def right_jacobian(w):
    """Right Jacobian of exp: body angular velocity = J_r(w) wdot."""
    w = np.asarray(w, dtype=float)
    s = float(w @ w)
    k = hat(w)
    return _EYE3 - _coef_b(s, 0) * k + _coef_c(s, 0) * (k @ k)


def rebase_chart_jacobian(w_old, w_new):
    """Jacobian of the chart change w_new = log(C^T exp(w_old)).

    Valid for any constant C with exp(w_new) = C^T exp(w_old); the map's
    differential is J_r(w_new)^{-1} J_r(w_old).
    """
    return np.linalg.solve(right_jacobian(w_new), right_jacobian(w_old))


def right_jacobian_deriv(w):
    """d J_r / d w_i, stacked (3, 3, 3) with index i first."""
    w = np.asarray(w, dtype=float)
    s = float(w @ w)
    k = hat(w)
    k2 = k @ k
    b1 = _coef_b(s, 1)
    c1 = _coef_c(s, 1)
    b0 = _coef_b(s, 0)
    c0 = _coef_c(s, 0)
    out = np.empty((3, 3, 3))
    for i in range(3):
        gi = _GEN[i]
        out[i] = (-(2.0 * w[i] * b1) * k - b0 * gi
                  + (2.0 * w[i] * c1) * k2 + c0 * (gi @ k + k @ gi))
    return out
