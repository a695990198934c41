"""RK4 kernels for the scalar Jost and regular solutions of ``u'' = (Q - k^2) u``."""
from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _rk4_pair(u, p, k2, q0, qm, q1, h):
    # y = (u, p = u'),  y' = (p, (q - k^2) u)
    a1 = p
    b1 = (q0 - k2) * u
    a2 = p + 0.5 * h * b1
    b2 = (qm - k2) * (u + 0.5 * h * a1)
    a3 = p + 0.5 * h * b2
    b3 = (qm - k2) * (u + 0.5 * h * a2)
    a4 = p + h * b3
    b4 = (q1 - k2) * (u + h * a3)
    u_new = u + h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
    p_new = p + h / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
    return u_new, p_new


@njit(cache=True)
def jost_scalar(k, r_end, qstages, steps):
    """Integrate ``J(r) = exp(i k r)`` (for ``r >= r_end``) back to ``r = 1``.

    ``qstages[j] = (Q(r_j), Q(r_j + h_j/2), Q(r_j + h_j))`` along the backward
    sweep and ``steps[j] = h_j < 0``.  Returns ``J(1)`` and ``J'(1)``.
    """
    nk = k.shape[0]
    out_u = np.empty(nk, dtype=np.complex128)
    out_p = np.empty(nk, dtype=np.complex128)
    for i in range(nk):
        kk = k[i]
        k2 = kk * kk
        u = np.exp(1j * kk * r_end)
        p = 1j * kk * u
        for j in range(steps.shape[0]):
            u, p = _rk4_pair(u, p, k2, qstages[j, 0], qstages[j, 1], qstages[j, 2], steps[j])
        out_u[i] = u
        out_p[i] = p
    return out_u, out_p


@njit(cache=True)
def regular_integral_scalar(k, qstages, steps):
    """``int phi dr`` over the swept range for ``phi(1) = 0, phi'(1) = 1``."""
    nk = k.shape[0]
    out = np.empty(nk)
    for i in range(nk):
        k2 = k[i] * k[i]
        u = 0.0
        p = 1.0
        acc = 0.0
        for j in range(steps.shape[0]):
            h = steps[j]
            # Simpson on the RK4 stage values of u is fourth order, matching RK4.
            a1 = p
            b1 = (qstages[j, 0] - k2) * u
            um2 = u + 0.5 * h * a1
            a2 = p + 0.5 * h * b1
            b2 = (qstages[j, 1] - k2) * um2
            um3 = u + 0.5 * h * a2
            a3 = p + 0.5 * h * b2
            b3 = (qstages[j, 1] - k2) * um3
            ue = u + h * a3
            a4 = p + h * b3
            b4 = (qstages[j, 2] - k2) * ue
            u_new = u + h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
            p_new = p + h / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
            acc += h / 6.0 * (u + 2.0 * um2 + 2.0 * um3 + ue)
            u = u_new
            p = p_new
        out[i] = acc
    return out


@njit(cache=True)
def shoot_radial(a, h, qstages, gamma2, dm1, s, out_u, out_p):
    """RK4 for ``u'' + (d-1) u'/r = (Q + gamma^2) u`` from ``u(a) = 1, u'(a) = s``.

    Fills node values; returns the number of sign changes of ``u`` (a node
    value ``<= 0`` after a positive one counts as a crossing).
    """
    u = 1.0
    p = s
    out_u[0] = u
    out_p[0] = p
    crossings = 0
    positive = True
    for j in range(qstages.shape[0]):
        r0 = a + j * h
        rm = r0 + 0.5 * h
        r1 = r0 + h
        q0 = qstages[j, 0] + gamma2
        qm = qstages[j, 1] + gamma2
        q1 = qstages[j, 2] + gamma2
        a1 = p
        b1 = q0 * u - dm1 * p / r0
        a2 = p + 0.5 * h * b1
        b2 = qm * (u + 0.5 * h * a1) - dm1 * a2 / rm
        a3 = p + 0.5 * h * b2
        b3 = qm * (u + 0.5 * h * a2) - dm1 * a3 / rm
        a4 = p + h * b3
        b4 = q1 * (u + h * a3) - dm1 * a4 / r1
        u = u + h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
        p = p + h / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
        out_u[j + 1] = u
        out_p[j + 1] = p
        if positive and u <= 0.0:
            crossings += 1
            positive = False
        elif not positive and u > 0.0:
            positive = True
    return crossings
