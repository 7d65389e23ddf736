"""Batched RK4 shooting step with forward sensitivities."""

from __future__ import annotations

import numpy as np


def rk4_step(f, x, u, h, derivatives=False):
    """One RK4 step per row of ``x``/``u``; ``h`` is a scalar or per-row array.

    ``f(x, u, derivatives)`` must return xdot, or (xdot, A, B) when asked.
    Returns x_next, or (x_next, Phi_x, Phi_u).
    """
    x = np.atleast_2d(x)
    u = np.atleast_2d(u)
    h = np.broadcast_to(np.asarray(h, dtype=float), (x.shape[0],))
    hc = h[:, None]
    if not derivatives:
        k1 = f(x, u, False)
        k2 = f(x + 0.5 * hc * k1, u, False)
        k3 = f(x + 0.5 * hc * k2, u, False)
        k4 = f(x + hc * k3, u, False)
        return x + hc / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    n, nx = x.shape
    eye = np.eye(nx)
    h3 = h[:, None, None]
    k1, A1, B1 = f(x, u, True)
    d1x, d1u = A1, B1
    k2, A2, B2 = f(x + 0.5 * hc * k1, u, True)
    d2x = A2 @ (eye + 0.5 * h3 * d1x)
    d2u = A2 @ (0.5 * h3 * d1u) + B2
    k3, A3, B3 = f(x + 0.5 * hc * k2, u, True)
    d3x = A3 @ (eye + 0.5 * h3 * d2x)
    d3u = A3 @ (0.5 * h3 * d2u) + B3
    k4, A4, B4 = f(x + hc * k3, u, True)
    d4x = A4 @ (eye + h3 * d3x)
    d4u = A4 @ (h3 * d3u) + B4
    xn = x + hc / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    Px = eye + h3 / 6.0 * (d1x + 2 * d2x + 2 * d3x + d4x)
    Pu = h3 / 6.0 * (d1u + 2 * d2u + 2 * d3u + d4u)
    return xn, Px, Pu
