"""2x2 matrix groups SL(2,R), SU(1,1) and their algebras.

Matrices are plain numpy arrays of shape (2, 2) (or (..., 2, 2) for the
vectorized exp2/log2).  The series helpers at the bottom lift exp and log to
matrix-valued Fourier series using only coefficient convolution.
"""
from dataclasses import dataclass
import math

import numpy as np
from scipy import linalg

from .fourier import FourierSeries

TOL = 1e-12
NEAR_PARABOLIC = 1e-12

# Cayley-type map between sl(2,R) and su(1,1): X -> M X M^{-1}
M = np.array([[1, -1j], [1, 1j]], dtype=np.complex128) / (1 + 1j)
MINV = np.linalg.inv(M)
I2 = np.eye(2, dtype=np.complex128)
J = np.array([[0.0, -1.0], [1.0, 0.0]])


class Lie2Error(ValueError):
    pass


class BranchError(Lie2Error):
    """No logarithm on the principal branch (trace -2, not -I)."""


class NearParabolicError(Lie2Error):
    pass


def rotation(phi):
    c, s = math.cos(phi), math.sin(phi)
    return np.array([[c, -s], [s, c]])


def opnorm(A):
    return float(np.linalg.norm(A, 2))


def is_group(A, tag="SL2R", tol=TOL):
    A = np.asarray(A)
    if abs(np.linalg.det(A) - 1) > tol * max(1.0, opnorm(A) ** 2):
        return False
    if tag == "SL2R":
        return bool(np.max(np.abs(np.imag(A))) <= tol)
    if tag == "SU11":
        a, b = A[0, 0], A[0, 1]
        return bool(abs(A[1, 0] - np.conj(b)) <= tol and abs(A[1, 1] - np.conj(a)) <= tol
                    and abs(abs(a) ** 2 - abs(b) ** 2 - 1) <= tol * max(1.0, abs(a) ** 2))
    return True


def is_algebra(X, tag="sl2R", tol=TOL):
    X = np.asarray(X)
    scale = max(1.0, float(np.max(np.abs(X))))
    if abs(X[0, 0] + X[1, 1]) > tol * scale:
        return False
    if tag == "sl2R":
        return bool(np.max(np.abs(np.imag(X))) <= tol * scale)
    if tag == "su11":
        return bool(abs(np.real(X[0, 0])) <= tol * scale and abs(X[1, 0] - np.conj(X[0, 1])) <= tol * scale)
    return True


def su11_coords(X):
    """(t, v) with X = [[i t, v], [conj v, -i t]]."""
    return float(np.imag(X[0, 0])), complex(X[0, 1])


# -- exponential and logarithm -------------------------------------------------

def _cosh_sqrt(x):
    """cosh(sqrt(x)) and sinh(sqrt(x))/sqrt(x), entire in x, for complex arrays."""
    x = np.asarray(x, dtype=np.complex128)
    small = np.abs(x) < 1e-3
    s = np.sqrt(np.where(small, 1.0, x))
    c_big = np.cosh(s)
    sh_big = np.sinh(s) / s
    # Taylor tails; |x| < 1e-3 so six terms reach machine precision
    c_sm = 1 + x / 2 + x ** 2 / 24 + x ** 3 / 720 + x ** 4 / 40320 + x ** 5 / 3628800
    sh_sm = 1 + x / 6 + x ** 2 / 120 + x ** 3 / 5040 + x ** 4 / 362880 + x ** 5 / 39916800
    return np.where(small, c_sm, c_big), np.where(small, sh_sm, sh_big)


def exp2(X):
    """exp of traceless 2x2 matrices (vectorized over leading axes)."""
    X = np.asarray(X, dtype=np.complex128)
    x = X[..., 0, 0] ** 2 + X[..., 0, 1] * X[..., 1, 0]  # = -det X for traceless X
    c, s = _cosh_sqrt(x)
    out = s[..., None, None] * X
    out[..., 0, 0] += c
    out[..., 1, 1] += c
    return out


def _asinh_ratio(u):
    """asinh(sqrt(u))/sqrt(u), analytic near u = 0."""
    u = np.asarray(u, dtype=np.complex128)
    small = np.abs(u) < 1e-4
    s = np.sqrt(np.where(small, 1.0, u))
    big = np.arcsinh(s) / s
    sm = 1 - u / 6 + 3 * u ** 2 / 40 - 5 * u ** 3 / 112 + 35 * u ** 4 / 1152
    return np.where(small, sm, big)


def log2(A, real=None):
    """Principal logarithm of SL(2) matrices (vectorized).

    Rotation angles land in (-pi, pi].  Trace -2 with A != -I has no
    logarithm and raises BranchError.
    """
    A_in = A
    A = np.asarray(A, dtype=np.complex128)
    c = (A[..., 0, 0] + A[..., 1, 1]) / 2
    K = A.copy()
    K[..., 0, 0] -= c
    K[..., 1, 1] -= c
    # K^2 = (c^2 - 1) I; u computed from K to avoid cancellation against 1
    u = (A[..., 0, 0] - A[..., 1, 1]) ** 2 / 4 + A[..., 0, 1] * A[..., 1, 0]
    knorm = np.abs(K).max(axis=(-2, -1))
    near_minus = np.abs(c + 1) < 1e-9
    if np.any(near_minus & (knorm > 1e-9)):
        raise BranchError("trace -2 and not -I: no principal logarithm")
    # use asinh(sqrt u)/sqrt u; for c < 0 reflect through -A which gives the angle-pi branch
    neg = np.real(c) < 0
    h = np.empty_like(c)
    if np.any(~neg):
        h[~neg] = _asinh_ratio(u[~neg])
    if np.any(neg):
        # angle phi in (pi/2, pi]: phi = pi - asin(|sin phi|), sin phi = sqrt(-u)
        sq = np.sqrt(-u[neg] + 0j)
        sq = np.where(np.abs(sq) == 0, 1.0, sq)
        ang = np.pi - np.arcsin(sq)
        h[neg] = ang / sq
    out = h[..., None, None] * K
    if np.any(neg & (knorm <= 1e-9)):
        # A = -I: pick rotation by pi
        idx = neg & (knorm <= 1e-9)
        out[idx] = np.pi * J
    if real is None:
        real = not np.iscomplexobj(np.asarray(A_in)) and float(np.max(np.abs(out.imag), initial=0)) < 1e-12
    return out.real if real else out


# -- the su(1,1) isomorphism --------------------------------------------------

def to_su11(X):
    X = np.asarray(X)
    if not is_algebra(X, "sl2R"):
        raise Lie2Error("expected a real traceless matrix")
    return M @ X @ MINV


def to_sl2(Y):
    Y = np.asarray(Y)
    if not is_algebra(Y, "su11"):
        raise Lie2Error("expected an su(1,1) matrix [[it, v], [conj v, -it]]")
    out = MINV @ Y @ M
    return out.real


def group_to_su11(A):
    return M @ np.asarray(A) @ MINV


def group_to_sl2(A):
    return MINV @ np.asarray(A) @ M


# -- spectral classification ------------------------------------------------

@dataclass(frozen=True)
class SpectralData:
    rho: complex
    cls: str  # "elliptic" | "hyperbolic" | "parabolic"

    @property
    def is_elliptic(self):
        return self.cls == "elliptic"


def spectral_data(A, tol=TOL):
    """rho with 2 cos rho = tr A; rho in [0, pi], i*t (t > 0) or pi + i*t."""
    A = np.asarray(A)
    tr = complex(A[0, 0] + A[1, 1])
    h = tr.real / 2
    if abs(h - 1) <= tol:
        return SpectralData(0.0 + 0j, "parabolic")
    if abs(h + 1) <= tol:
        return SpectralData(math.pi + 0j, "parabolic")
    if -1 < h < 1:
        return SpectralData(complex(math.acos(h)), "elliptic")
    if h > 1:
        return SpectralData(1j * math.acosh(h), "hyperbolic")
    return SpectralData(math.pi + 1j * math.acosh(-h), "hyperbolic")


def diagonalize_elliptic(A, rho=None, threshold=NEAR_PARABOLIC):
    """P in SU(1,1) with P A P^{-1} = diag(e^{i rho}, e^{-i rho}) for elliptic A in SU(1,1).

    The sign of rho is fixed by the SU(1,1) class of A (an elliptic element
    and its inverse are not SU(1,1)-conjugate); the signed value is returned
    alongside P.
    """
    A = np.asarray(A, dtype=np.complex128)
    sd = spectral_data(A)
    if sd.cls == "parabolic":
        raise NearParabolicError("trace is +-2 to working precision")
    if sd.cls != "elliptic":
        raise Lie2Error(f"matrix is {sd.cls}, not elliptic")
    r = float(sd.rho.real)
    if rho is not None and abs(abs(rho) - r) > 1e-8:
        raise Lie2Error(f"rho={rho} does not match the trace (|rho|={r})")
    if min(r, math.pi - r) < threshold:
        raise NearParabolicError("rotation angle below the near-parabolic threshold")
    for sgn in (1.0, -1.0):
        lam = np.exp(1j * sgn * r)
        a, b, c, d = A[0, 0], A[0, 1], A[1, 0], A[1, 1]
        v1 = np.array([b, lam - a])
        v2 = np.array([lam - d, c])
        v = v1 if np.linalg.norm(v1) >= np.linalg.norm(v2) else v2
        q = abs(v[0]) ** 2 - abs(v[1]) ** 2
        if q > 0:
            # unit phase making the first entry real positive, so diagonal input gives P = I
            v = v * (np.conj(v[0]) / abs(v[0])) / math.sqrt(q)
            p, qb = v
            Pinv = np.array([[p, np.conj(qb)], [qb, np.conj(p)]])
            return np.linalg.inv(Pinv), sgn * r
    raise Lie2Error("no positive-norm eigenvector; A is not in SU(1,1)")


def schur_upper(A):
    """Unitary U (det 1) with U A U^{-1} = [[e^g, c], [0, e^{-g}]]; returns (U, T, gamma, c)."""
    A = np.asarray(A, dtype=np.complex128)
    T, Z = linalg.schur(A, output="complex")
    U = Z.conj().T
    U = U / np.sqrt(np.linalg.det(U))
    T = U @ A @ np.linalg.inv(U)
    T[1, 0] = 0.0
    gamma = complex(np.log(T[0, 0]))
    return U, T, gamma, complex(T[0, 1])


# -- series versions -----------------------------------------------------------

def _scalar_power_series(x, coeffs_fn, cap, rel=1e-18, max_terms=80):
    """sum_m a_m x^m for a scalar series x (a_0 term included)."""
    total = FourierSeries.constant(coeffs_fn(0), x.dim, "complex", x.double_period)
    power = None
    first = None
    for m in range(1, max_terms):
        power = x if power is None else power.mul(x, cap)
        term = power.scale(coeffs_fn(m))
        mass = term.l1_mass()
        if first is None:
            first = max(mass, 1e-300)
        total = total + term
        if mass == 0 or mass <= rel * first:
            break
    return total


def _fact(n):
    return float(math.factorial(n))


def expm1_series(X, cap=None):
    """e^{X(theta)} - I for a traceless matrix series X, by convolution only."""
    a = X.entry(0, 0)
    x = a.mul(a, cap) + X.entry(0, 1).mul(X.entry(1, 0), cap)
    cm1 = _scalar_power_series(x, lambda m: 0.0 if m == 0 else 1.0 / _fact(2 * m), cap)
    s = _scalar_power_series(x, lambda m: 1.0 / _fact(2 * m + 1), cap)
    out = s.mul(X, cap)
    return out + cm1.lmul(I2)


def exp_series(X, cap=None):
    return expm1_series(X, cap) + FourierSeries.constant(I2, X.dim, "mat_complex", X.double_period)


def log1p_series(W, cap=None):
    """log(I + W) for a matrix series with I + W in SL(2) pointwise and W small."""
    trh = W.trace().scale(0.5)
    K = W - trh.lmul(I2)
    k00 = K.entry(0, 0)
    u = k00.mul(k00, cap) + K.entry(0, 1).mul(K.entry(1, 0), cap)
    h = _scalar_power_series(
        u, lambda k: (-1) ** k * _fact(2 * k) / (4 ** k * _fact(k) ** 2 * (2 * k + 1)), cap)
    return h.mul(K, cap)


def product_minus_identity(factors, cap=None):
    """(I + W1)(I + W2)...(I + Wk) - I without forming the identity parts."""
    acc = factors[0]
    for W in factors[1:]:
        acc = acc + W + acc.mul(W, cap)
    return acc
