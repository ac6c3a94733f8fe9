"""Pure-numpy orbit kernels (fallback for the compiled _kernels module).

Every routine is vectorized over P independent orbits and loops over time.
State arrays are updated in place so long orbits can be fed in chunks:

  frame  (P, 2, 2)  running product, renormalized every `stride` steps
  logacc (P,)       accumulated log of the renormalization factors
  vec    (P, 2)     unit vector tracked for the rotation number
  rot    (P,)       accumulated lifted angle increment
  wrot   (P,)       optional weighted sum of the increments (weights (n,) per step)
"""
import math

import numpy as np

HALF_PI = 0.5 * math.pi


def _lift_increment(a, b, c, d, x, y):
    """Apply [[a,b],[c,d]] to unit vectors (x, y); return new unit vector and lifted angle step.

    The lift is the rotation angle of the polar part, atan2(c - b, a + d), plus the
    (|.| < pi/2) turn produced by the positive part.
    """
    nx = a * x + b * y
    ny = c * x + d * y
    psi = np.arctan2(c - b, a + d)
    raw = np.arctan2(x * ny - y * nx, x * nx + y * ny)
    # reduce raw - psi into [-pi/2, pi/2)
    delta = np.mod(raw - psi + HALF_PI, math.pi) - HALF_PI
    nrm = np.hypot(nx, ny)
    return nx / nrm, ny / nrm, psi + delta


def schrodinger_step(E, v, frame, logacc, vec, rot, stride=32, weights=None, wrot=None):
    """Advance P Schrodinger orbits through the potential values v (P, n)."""
    P, n = v.shape
    f00, f01, f10, f11 = (frame[:, 0, 0].copy(), frame[:, 0, 1].copy(),
                          frame[:, 1, 0].copy(), frame[:, 1, 1].copy())
    x, y = vec[:, 0].copy(), vec[:, 1].copy()
    r = rot.copy()
    la = logacc.copy()
    wr = wrot.copy() if weights is not None else None
    for j in range(n):
        c = E - v[:, j]
        # [[c, -1], [1, 0]] @ frame
        f00, f01, f10, f11 = c * f00 - f10, c * f01 - f11, f00, f01
        x, y, dr = _lift_increment(c, -1.0, 1.0, 0.0, x, y)
        r += dr
        if weights is not None:
            wr += weights[j] * dr
        if (j + 1) % stride == 0:
            s = np.maximum(np.maximum(np.abs(f00), np.abs(f01)), np.maximum(np.abs(f10), np.abs(f11)))
            f00, f01, f10, f11 = f00 / s, f01 / s, f10 / s, f11 / s
            la += np.log(s)
    s = np.maximum(np.maximum(np.abs(f00), np.abs(f01)), np.maximum(np.abs(f10), np.abs(f11)))
    frame[:, 0, 0], frame[:, 0, 1], frame[:, 1, 0], frame[:, 1, 1] = f00 / s, f01 / s, f10 / s, f11 / s
    logacc[:] = la + np.log(s)
    vec[:, 0], vec[:, 1] = x, y
    rot[:] = r
    if weights is not None:
        wrot[:] = wr


def matrix_step(mats, frame, logacc, vec, rot, stride=32, weights=None, wrot=None):
    """Advance P orbits through explicit real matrices mats (P, n, 2, 2)."""
    P, n = mats.shape[:2]
    F = frame.copy()
    x, y = vec[:, 0].copy(), vec[:, 1].copy()
    r = rot.copy()
    la = logacc.copy()
    wr = wrot.copy() if weights is not None else None
    for j in range(n):
        A = mats[:, j]
        F = np.einsum("pij,pjk->pik", A, F)
        x, y, dr = _lift_increment(A[:, 0, 0], A[:, 0, 1], A[:, 1, 0], A[:, 1, 1], x, y)
        r += dr
        if weights is not None:
            wr += weights[j] * dr
        if (j + 1) % stride == 0:
            s = np.abs(F).max(axis=(1, 2))
            F /= s[:, None, None]
            la += np.log(s)
    s = np.abs(F).max(axis=(1, 2))
    frame[:] = F / s[:, None, None]
    logacc[:] = la + np.log(s)
    vec[:, 0], vec[:, 1] = x, y
    rot[:] = r
    if weights is not None:
        wrot[:] = wr


def _opnorm2(f00, f01, f10, f11):
    # largest singular value of a 2x2 real matrix
    s = f00 * f00 + f01 * f01 + f10 * f10 + f11 * f11
    det = f00 * f11 - f01 * f10
    return np.sqrt(0.5 * (s + np.sqrt(np.maximum(s * s - 4 * det * det, 0.0))))


def schrodinger_growth(E, v, frame):
    """Operator norms ||A_s|| for s = 1..n along P orbits; frame (P,2,2) carries the product."""
    P, n = v.shape
    out = np.empty((P, n))
    f00, f01, f10, f11 = (frame[:, 0, 0].copy(), frame[:, 0, 1].copy(),
                          frame[:, 1, 0].copy(), frame[:, 1, 1].copy())
    for j in range(n):
        c = E - v[:, j]
        f00, f01, f10, f11 = c * f00 - f10, c * f01 - f11, f00, f01
        out[:, j] = _opnorm2(f00, f01, f10, f11)
    frame[:, 0, 0], frame[:, 0, 1], frame[:, 1, 0], frame[:, 1, 1] = f00, f01, f10, f11
    return out


def matrix_growth(mats, frame):
    """Operator norms of running products through mats (P, n, 2, 2)."""
    P, n = mats.shape[:2]
    out = np.empty((P, n))
    F = frame.copy()
    for j in range(n):
        F = np.einsum("pij,pjk->pik", mats[:, j], F)
        out[:, j] = _opnorm2(F[:, 0, 0], F[:, 0, 1], F[:, 1, 0], F[:, 1, 1])
    frame[:] = F
    return out
