"""One step of the analytic KAM scheme for (alpha, A exp(f)).

Everything is computed in the su(1,1) frame X -> M X M^{-1}; inputs and outputs
are real sl(2,R) / SL(2,R) objects.
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .fourier import FourierSeries
from .frequency import torus_distance
from .lie2 import (M, MINV, I2, Lie2Error, NearParabolicError, diagonalize_elliptic, exp2,
                   expm1_series, log1p_series, log2, opnorm, product_minus_identity,
                   spectral_data, su11_coords)

log = logging.getLogger(__name__)

U_ROUND = np.finfo(float).eps
DIVISOR_FLOOR = 1e-14


class KamError(RuntimeError):
    pass


class GateError(KamError):
    pass


class DoubleResonanceError(KamError):
    pass


class NonContractionError(KamError):
    pass


class SmallDivisorError(KamError):
    pass


@dataclass
class KamParams:
    r: float
    r_prime: float
    sigma: float
    kappa: float
    tau: float
    eps: float
    slack: float = 4.0
    c_gate: float = 1e-3
    D_tilde: float = 4.0
    D: float = None
    strict_uniqueness: bool = False
    max_iter: int = 40
    grid: int = 1024

    def __post_init__(self):
        if not 0 < self.sigma < 1 / 6:
            raise ValueError("sigma must lie in (0, 1/6)")
        if not 0 < self.r_prime < self.r:
            raise ValueError("need 0 < r' < r")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.D is None:
            self.D = 2 / self.sigma + 0.5

    @property
    def N(self):
        return window_N(self)

    def as_dict(self):
        return {k: getattr(self, k) for k in ("r", "r_prime", "sigma", "kappa", "tau", "eps", "slack",
                                               "c_gate", "D_tilde", "D")}


@dataclass
class Audit:
    name: str
    lhs: float
    rhs: float
    binding: bool = True
    atol: float = 0.0  # rounding allowance for quantities computed from O(1) matrices

    @property
    def passed(self):
        return bool(self.lhs <= self.rhs + self.atol)

    def to_json(self):
        return {"name": self.name, "lhs": float(self.lhs), "rhs": float(self.rhs), "atol": float(self.atol),
                "pass": self.passed, "binding": self.binding}


@dataclass
class KamStepResult:
    branch: str  # "NonResonant" | "Resonant"
    B: FourierSeries
    A_plus: np.ndarray
    f_plus: FourierSeries
    audits: list = field(default_factory=list)
    n_star: tuple = None
    rho_pre: float = None
    sites: list = field(default_factory=list)
    A_dd: np.ndarray = None  # A'' with A_plus = sign * exp(A'')
    sign: int = 1
    residual: float = None
    iterations: int = 0
    degree_shift: tuple = None  # deg B on the doubled torus
    dropped: float = 0.0  # r-norm of everything discarded below the iteration tolerance
    A_tilde: np.ndarray = None  # rotated constant before the e^{L} correction (resonant only)

    @property
    def passed(self):
        return all(a.passed for a in self.audits if a.binding)

    def failed_audits(self):
        return [a.name for a in self.audits if a.binding and not a.passed]


# -- small helpers -------------------------------------------------------------------

def window_N(params):
    if params.eps >= 1:
        raise KamError("eps must be < 1")
    return 2 * abs(math.log(params.eps)) / (params.r - params.r_prime)


def signed_rotation(A):
    """Rotation angle of an elliptic SL(2,R) matrix, signed by its orientation (R_phi -> phi)."""
    sd = spectral_data(A)
    if sd.cls == "hyperbolic":
        return sd.rho
    r = float(sd.rho.real)
    return complex(r if A[1, 0] >= 0 else -r)


def _phases(series, freq):
    """<n, alpha> on the coefficient box of `series` (halved on the doubled torus)."""
    scale = 0.5 if series.double_period else 1.0
    grids = series._index_grids()
    return scale * sum(g * a for g, a in zip(grids, freq.alpha))


def _coords(X):
    return np.stack([X[..., 0, 0], X[..., 0, 1], X[..., 1, 0]], axis=-1)


def _from_coords(y):
    X = np.empty(y.shape[:-1] + (2, 2), dtype=np.complex128)
    X[..., 0, 0] = y[..., 0]
    X[..., 0, 1] = y[..., 1]
    X[..., 1, 0] = y[..., 2]
    X[..., 1, 1] = -y[..., 0]
    return X


def _ad_inverse(A):
    """3x3 matrix of X -> A^{-1} X A on traceless coordinates (X00, X01, X10)."""
    Ai = np.linalg.inv(A)
    basis = _from_coords(np.eye(3, dtype=np.complex128))
    return _coords(np.einsum("ij,bjk,kl->bil", Ai, basis, A)).T


def _series_like(template, coeffs, kind="su11"):
    return FourierSeries(coeffs, template.dim, kind, template.double_period)


def _to_frame(f):
    return f.conjugate_by(M, kind="su11")


def _from_frame(g, kind="mat_real"):
    out = g.conjugate_by(MINV)
    return out.with_kind(kind)


# -- resonance scan ------------------------------------------------------------------

def _lattice(dim, N):
    R = int(math.floor(N))
    if R < 1:
        return np.zeros((0, dim), dtype=int)
    axes = [np.arange(-R, R + 1)] * dim
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dim)
    l1 = np.abs(pts).sum(axis=1)
    return pts[(l1 > 0) & (l1 <= N)]


def resonance_sites(two_rho, freq, N, threshold):
    """All (n, distance) with 0 < |n| <= N and |2 rho - <n, alpha>|_T < threshold, best first."""
    ns = _lattice(freq.dim, N)
    if ns.size == 0:
        return []
    d = torus_distance(two_rho - ns @ freq.alpha)
    hit = np.flatnonzero(d < threshold)
    order = sorted(hit, key=lambda i: (d[i], int(np.abs(ns[i]).sum()), tuple(ns[i])))
    return [(tuple(int(x) for x in ns[i]), float(d[i])) for i in order]


def resonance_scan(rho, freq, N, threshold, strict=True):
    """Closest resonant site n* (tuple) or None.  rho is SpectralData or a signed real angle."""
    if hasattr(rho, "cls"):
        if rho.cls == "hyperbolic":
            return None
        r = float(rho.rho.real)
    else:
        if abs(complex(rho).imag) > 0:
            return None
        r = float(complex(rho).real)
    sites = resonance_sites(2 * r, freq, N, threshold)
    if not sites:
        return None
    if strict and len(sites) > 1:
        raise DoubleResonanceError(f"{len(sites)} resonant sites below threshold, e.g. {sites[:3]}")
    return sites[0][0]


# -- cohomological equation --------------------------------------------------------------

def eigen_divisors(A, phases):
    mu = np.linalg.eigvals(_ad_inverse(A))
    return np.abs(np.exp(1j * np.asarray(phases))[..., None] * mu - 1)


def solve_cohomological(A, rhs, freq, rho=None):
    """Y with A^{-1} Y(theta + alpha) A - Y(theta) = rhs, mode by mode.

    In the eigenbasis of X -> A^{-1} X A (eigenvalues 1, e^{-+2 i rho}) each
    component is divided by e^{i<n,alpha>} mu - 1; only components actually present
    in rhs are divided, so a zero-mean rhs is not needed when its mean lies in the
    off-diagonal directions.
    """
    A = np.asarray(A, dtype=np.complex128)
    T = _ad_inverse(A)
    ph = _phases(rhs, freq)
    y = _coords(rhs.coeffs)
    present = np.abs(y).max(axis=-1) > 0
    out = np.zeros_like(y)
    if not np.any(present):
        return _series_like(rhs, _from_coords(out), rhs.kind)
    if np.count_nonzero(T - np.diag(np.diag(T))) == 0:
        mu, V = np.diag(T).copy(), np.eye(3, dtype=np.complex128)
    else:
        mu, V = np.linalg.eig(T)
    e = np.exp(1j * ph[present])
    if np.linalg.cond(V) < 1e8:
        z = np.linalg.solve(V, y[present].T).T
        div = e[:, None] * mu[None, :] - 1
        # components at rounding level relative to their mode carry no information
        used = np.abs(z) > 64 * U_ROUND * np.abs(y[present]).max(axis=-1, keepdims=True)
        dmin = np.abs(div[used]).min() if np.any(used) else math.inf
        if dmin < DIVISOR_FLOOR:
            raise SmallDivisorError(f"divisor {dmin:.3e} below {DIVISOR_FLOOR}")
        z = np.where(used, z / np.where(used, div, 1), 0)
        out[present] = (V @ z.T).T
    else:
        # defective adjoint map (parabolic A): direct 3x3 solves
        L = e[:, None, None] * T[None] - np.eye(3)[None]
        dmin = np.abs(e[:, None] * mu[None, :] - 1).min()
        if dmin < DIVISOR_FLOOR:
            raise SmallDivisorError(f"divisor {dmin:.3e} below {DIVISOR_FLOOR}")
        out[present] = np.linalg.solve(L, y[present][..., None])[..., 0]
    return _series_like(rhs, _from_coords(out), rhs.kind)


def cohomological_residual(A, Y, rhs, freq, r):
    A = np.asarray(A, dtype=np.complex128)
    lhs = Y.shift(freq.alpha).conjugate_by(np.linalg.inv(A)) - Y
    return (lhs - rhs).analytic_norm(r)


# -- resonant-space masks ------------------------------------------------------------------

def nonresonant_mask_window(series, N):
    """Keep-mask of the resonant space for the non-resonant branch: n = 0 or |n| > N."""
    fn = series.freq_norms()
    keep = (fn == 0) | (fn > N)
    return np.broadcast_to(keep[..., None, None], keep.shape + (2, 2))


def resonant_mask_split(series, freq, rho_su, eta):
    """Keep-mask for the resonant branch with A = diag(e^{i rho}, e^{-i rho}).

    Diagonal modes with |<n,alpha>|_T < eta and off-diagonal modes whose divisor
    |<n,alpha> -+ 2 rho|_T < eta stay; everything else is removable.
    """
    ph = _phases(series, freq)
    keep = np.zeros(ph.shape + (2, 2), dtype=bool)
    dg = torus_distance(ph) < eta
    keep[..., 0, 0] = dg
    keep[..., 1, 1] = dg
    keep[..., 0, 1] = torus_distance(ph - 2 * rho_su) < eta
    keep[..., 1, 0] = torus_distance(ph + 2 * rho_su) < eta
    return keep


def _project(g, keep):
    return _series_like(g, np.where(keep, g.coeffs, 0), g.kind)


# -- linear-solve iteration ------------------------------------------------------------------

@dataclass
class RemovalResult:
    Y_exp: FourierSeries  # e^{Y} as a matrix series
    g_re: FourierSeries
    Y: FourierSeries
    iterations: int
    history: list
    dropped: float  # r-norm of the non-resonant remainder left below tolerance
    tol: float


def remove_nonresonant(A, g, eta, params, freq, keep_fn, cap=None):
    """Fixed-point removal of the non-resonant part of g (su(1,1) frame).

    keep_fn(series) returns the resonant keep-mask for that series' box.
    Returns e^Y, g_re with e^{Y(theta+alpha)} A e^{g} e^{-Y} = A e^{g_re} up to the
    dropped sub-tolerance remainder.
    """
    A = np.asarray(A, dtype=np.complex128)
    Ainv = np.linalg.inv(A)
    r = params.r
    g_norm = g.analytic_norm(r)
    tol = max(1e-2 * params.eps ** 3, 64 * U_ROUND * g_norm)
    g_cur = g
    Yexp = None
    history = []
    stalls = 0
    it = 0
    for it in range(params.max_iter + 1):
        gn = _project(g_cur, ~keep_fn(g_cur))
        size = gn.analytic_norm(r)
        history.append(size)
        if size <= tol:
            break
        if it == params.max_iter:
            raise NonContractionError(f"no convergence in {params.max_iter} iterations (last {size:.3e})")
        if len(history) > 1 and size >= history[-2]:
            stalls += 1
            if stalls >= 3:
                raise NonContractionError(f"update norms stopped decreasing: {history[-4:]}")
        else:
            stalls = 0
        dY = solve_cohomological(A, -gn, freq)
        W1 = expm1_series(dY.shift(freq.alpha).conjugate_by(Ainv, kind="su11"), cap)
        W2 = expm1_series(g_cur, cap)
        W3 = expm1_series(-dY, cap)
        W = product_minus_identity([W1, W2, W3], cap)
        g_cur = log1p_series(W, cap).with_kind("su11")
        Ed = expm1_series(dY, cap)
        Yexp = Ed if Yexp is None else product_minus_identity([Ed, Yexp], cap)
    g_re = _project(g_cur, keep_fn(g_cur))
    dropped = history[-1]
    if Yexp is None:
        Yexp = FourierSeries.zeros(g.dim, "mat_complex", g.double_period)
        Y = FourierSeries.zeros(g.dim, "su11", g.double_period)
    else:
        Y = log1p_series(Yexp, cap).with_kind("su11")
    one = FourierSeries.constant(I2, g.dim, "mat_complex", g.double_period)
    return RemovalResult(Yexp + one, g_re, Y, it, history, dropped, tol)


# -- residual ------------------------------------------------------------------------------

def _grid_points(dim, G, period):
    if dim == 1:
        return (np.arange(G) * (period / G))[:, None]
    rng = np.random.default_rng(12345)
    return rng.uniform(0, period, size=(G, dim))


def conjugation_residual(A, f, B, A_plus, f_plus, freq, G=1024):
    """sup over a grid of ||B(theta+alpha) A e^{f} B^{-1}(theta) - A_plus e^{f_plus}||."""
    period = 4 * math.pi if B.double_period else 2 * math.pi
    th = _grid_points(f.dim, G, period)
    Bt = np.real(B.eval(th))
    Bs = np.real(B.eval(th + freq.alpha))
    Binv = np.linalg.inv(Bt)
    lhs = Bs @ (np.asarray(A) @ np.real(exp2(f.eval(th)))) @ Binv
    rhs = np.asarray(A_plus) @ np.real(exp2(f_plus.eval(th)))
    return float(np.max(np.linalg.norm(lhs - rhs, 2, axis=(1, 2)))), float(np.max(np.linalg.norm(Bt, 2, axis=(1, 2))))


# -- gates ---------------------------------------------------------------------------------

def gate_audits(A, params):
    nA = opnorm(A)
    eps = params.eps
    formal = params.c_gate * (params.r - params.r_prime) ** (params.D * params.tau) / nA ** params.D_tilde
    return [
        Audit("gate_operational", eps, (4 * nA) ** -4, True),
        Audit("gate_formal", eps, formal, False),
    ]


def check_gate(A, f, params):
    fn = f.analytic_norm(params.r)
    audits = gate_audits(A, params)
    if fn > params.eps * (1 + 1e-12):
        raise GateError(f"|f|_r = {fn:.3e} exceeds eps = {params.eps:.3e}")
    if not audits[0].passed:
        raise GateError(f"eps = {params.eps:.3e} exceeds the operational gate {audits[0].rhs:.3e}")
    return audits


# -- the step --------------------------------------------------------------------------------

def _log_shifted(a, full, cap):
    """log(e^{-a} e^{full}) for a constant a and a series full = a + t.

    Uses e^{-a}(e^{full} - e^{a}) so every surviving term carries a factor of t.
    """
    const = expm1_series(FourierSeries.constant(a, full.dim, "mat_complex", full.double_period), cap)
    W = (expm1_series(full, cap) - const).lmul(np.linalg.inv(exp2(a)))
    return log1p_series(W, cap)


def sup_norm(B, G=512):
    period = 4 * math.pi if B.double_period else 2 * math.pi
    vals = np.real(B.eval(_grid_points(B.dim, G, period)))
    return float(np.max(np.linalg.norm(vals, 2, axis=(1, 2))))


def kam_step(A, f, params, freq, check_gate_first=True):
    A = np.asarray(A, dtype=float)
    if f.double_period:
        raise KamError("f must be 2pi-periodic")
    audits = check_gate(A, f, params) if check_gate_first else gate_audits(A, params)
    eps, sigma, slack = params.eps, params.sigma, params.slack
    nA = opnorm(A)
    N = window_N(params)
    cap = 4 * N
    Abar = M @ A @ MINV
    gbar = _to_frame(f)
    rho_rot = signed_rotation(A)
    thr = eps ** sigma
    if abs(rho_rot.imag) > 0 or spectral_data(A).cls != "elliptic":
        sites = []
    else:
        sites = resonance_sites(2 * rho_rot.real, freq, N, thr)
    if sites and params.strict_uniqueness and len(sites) > 1:
        raise DoubleResonanceError(f"{len(sites)} resonant sites: {sites[:4]}")
    if f.is_zero():
        # nothing to remove: the constant cocycle is already in final form
        res = KamStepResult("NonResonant", FourierSeries.constant(np.eye(2), f.dim, "mat_real"), A.copy(),
                            FourierSeries.zeros(f.dim, "mat_real"), audits + [Audit("unique_site", len(sites), 1, False)],
                            degree_shift=tuple([0] * f.dim))
    elif not sites:
        res = _nonresonant(A, Abar, f, gbar, params, freq, N, cap, audits, nA)
    else:
        res = _resonant(A, Abar, f, gbar, params, freq, N, cap, audits, nA, rho_rot.real, sites)
    res.sites = sites
    resid, b0 = conjugation_residual(A, f, res.B, res.A_plus, res.f_plus, freq, params.grid)
    res.residual = resid
    res.audits.append(Audit("conjugation_residual", resid, 1e-9 * (1 + b0 ** 2 * nA)))
    return res


def _nonresonant(A, Abar, f, gbar, params, freq, N, cap, audits, nA):
    eps, sigma, slack = params.eps, params.sigma, params.slack
    eta = eps ** (3 * sigma)
    keep_fn = lambda s: nonresonant_mask_window(s, N)  # noqa: E731
    rem = remove_nonresonant(Abar, gbar, eta, params, freq, keep_fn, cap)
    g_re = rem.g_re
    a0 = g_re.mean()
    tail = g_re - FourierSeries.constant(a0, g_re.dim, "su11", g_re.double_period)
    A_plus_su = Abar @ exp2(a0)
    dropped = rem.dropped
    tail_norm = tail.analytic_norm(params.r)
    if tail_norm <= rem.tol:
        # everything left is below the removal tolerance: treat it like the remainder
        dropped += tail_norm
        f_plus_su = FourierSeries.zeros(g_re.dim, "su11", g_re.double_period)
    else:
        f_plus_su = _log_shifted(a0, g_re, cap).with_kind("su11")
    A_plus = np.real(MINV @ A_plus_su @ M)
    f_plus = _from_frame(f_plus_su)
    B = _from_frame(rem.Y_exp)
    Bm1 = B - FourierSeries.constant(np.eye(2), B.dim, "mat_real", B.double_period)
    present = gbar.coeff_norms() > 0
    ph = _phases(gbar, freq)[present & (gbar.lattice_l1() != 0)]
    div = eigen_divisors(Abar, ph).min() if ph.size else math.inf
    audits += [
        Audit("B_minus_id", Bm1.analytic_norm(params.r_prime), slack * eps ** 0.5),
        Audit("f_plus_bound", f_plus.analytic_norm(params.r_prime), slack * eps ** (3 - sigma)),
        Audit("A_plus_shift", opnorm(A_plus - A), slack * 2 * nA * eps, atol=64 * U_ROUND * nA),
        Audit("Y_bound", rem.Y.analytic_norm(params.r), slack * eps ** 0.5),
        Audit("g_re_bound", g_re.analytic_norm(params.r), slack * 2 * eps),
        Audit("eta_condition", 13 * nA ** 2 * eps ** 0.5, eta, False),
        Audit("divisor_floor", eta / 2, div, False),
    ]
    return KamStepResult("NonResonant", B, A_plus, f_plus, audits, iterations=rem.iterations,
                         degree_shift=tuple([0] * f.dim), dropped=dropped)


def site_mass(g_re, n_su):
    """|coefficient of e^{i<n,theta>}| in the (1,2) entry of g_re (0 outside its box)."""
    R = g_re.radius
    idx = tuple(R + int(k) for k in n_su)
    if not all(0 <= i < 2 * R + 1 for i in idx):
        return 0.0
    return float(abs(g_re.coeffs[idx][0, 1]))


def pick_site(sites, g_re, flip, tol):
    """Resonant site to rotate away: largest resonant mass above tol, then closest.

    With a unique site this is that site; with several (the usual situation at
    moderate eps) it removes the mode that actually carries content.
    """
    def key(item):
        n, d = item
        m = site_mass(g_re, [flip * k for k in n])
        return (-(m if m > tol else 0.0), d, sum(abs(k) for k in n), n)
    return min(sites, key=key)[0]


def _resonant(A, Abar, f, gbar, params, freq, N, cap, audits, nA, rho_rot, sites):
    eps, sigma, slack, tau, kappa = params.eps, params.sigma, params.slack, params.tau, params.kappa
    dr = params.r - params.r_prime
    try:
        P, rho_su = diagonalize_elliptic(Abar)
    except NearParabolicError:
        raise
    except Lie2Error as exc:
        raise KamError(f"resonant branch needs an elliptic constant: {exc}") from exc
    flip = -1 if rho_su * rho_rot <= 0 else 1
    Pinv = np.linalg.inv(P)
    diag_err = opnorm(P @ Abar @ Pinv - np.diag([np.exp(1j * rho_su), np.exp(-1j * rho_su)]))
    Ad = np.diag([np.exp(1j * rho_su), np.exp(-1j * rho_su)])
    g = gbar.conjugate_by(P, kind="su11")
    eps_p = 2 ** (4 + tau) * nA * abs(math.log(eps)) ** tau * eps / (kappa * dr ** tau)
    eta = eps ** sigma
    keep_fn = lambda s: resonant_mask_split(s, freq, rho_su, eta)  # noqa: E731
    rem = remove_nonresonant(Ad, g, eta, params, freq, keep_fn, cap)
    g_re = rem.g_re
    n_star = np.array(pick_site(sites, g_re, flip, rem.tol))
    n_su = flip * n_star
    # split g_re = g0 (diagonal mean) + g1 (n*-mode off-diagonal) + g2 (rest)
    c = np.array(g_re.coeffs)
    R = g_re.radius
    zero = (R,) * g_re.dim
    g0 = np.zeros((2, 2), dtype=np.complex128)
    g0[0, 0], g0[1, 1] = c[zero][0, 0], c[zero][1, 1]
    c[zero][0, 0] = c[zero][1, 1] = 0
    v_hat = 0j
    idx_p = tuple(R + int(k) for k in n_su)
    idx_m = tuple(R - int(k) for k in n_su)
    if all(0 <= i < 2 * R + 1 for i in idx_p):
        v_hat = complex(c[idx_p][0, 1])
        c[idx_p][0, 1] = 0
        c[idx_m][1, 0] = 0
    g2 = _series_like(g_re, c, "su11")
    # Q(theta) = diag(e^{-i<n,theta>/2}, e^{i<n,theta>/2}) on the doubled torus
    e_m = FourierSeries.from_modes({tuple(-n_su): 1.0}, g.dim, "complex")
    e_p = FourierSeries.from_modes({tuple(n_su): 1.0}, g.dim, "complex")
    F_su = FourierSeries.from_entries(
        [[g2.entry(0, 0), g2.entry(0, 1).mul(e_m)], [g2.entry(1, 0).mul(e_p), g2.entry(1, 1)]], kind="su11")
    L = g0 + np.array([[0, v_hat], [np.conj(v_hat), 0]])
    shift = float(np.dot(n_su, freq.alpha)) / 2
    A_tilde = np.diag([np.exp(1j * (rho_su - shift)), np.exp(-1j * (rho_su - shift))])
    A_plus_su = A_tilde @ exp2(L)
    dropped = rem.dropped
    g2_norm = g2.analytic_norm(params.r)
    if g2_norm <= rem.tol:
        dropped += g2_norm
        f_plus_su = FourierSeries.zeros(g.dim, "su11")
    else:
        full = F_su + FourierSeries.constant(L, g.dim, "su11")
        f_plus_su = _log_shifted(L, full, cap).with_kind("su11")
    A_plus = np.real(MINV @ A_plus_su @ M)
    sign = 1 if np.trace(A_plus).real >= 0 else -1
    A_dd = np.real(log2(sign * A_plus, real=True))
    t, v = su11_coords(M @ A_dd @ MINV)
    q1 = FourierSeries.from_modes({tuple(-n_su): 1.0}, g.dim, "complex", True)
    q2 = FourierSeries.from_modes({tuple(n_su): 1.0}, g.dim, "complex", True)
    zero_s = FourierSeries.zeros(g.dim, "complex", True)
    Q = FourierSeries.from_entries([[q1, zero_s], [zero_s, q2]], kind="mat_complex")
    B_su = Q.mul(rem.Y_exp.to_double()).rmul(P)
    B = _from_frame(B_su)
    f_plus = _from_frame(f_plus_su)
    Np = 2 ** (-1 / tau) * kappa ** (1 / tau) * eps ** (-sigma / tau) - N
    d = f.dim
    fp_rhs = (2 ** (5 + tau) * nA * abs(math.log(eps)) ** tau / (kappa * dr ** tau) * eps
              * math.exp(-max(Np, 0) * dr) * max(Np, 1) ** d * math.exp(N * params.r_prime))
    nb = 8 * (nA / kappa) ** 0.5 * N ** (tau / 2)
    B0 = sup_norm(B)
    rnd = 64 * U_ROUND * nA
    P_bound = 2 * (nA / abs(rho_su)) ** 0.5
    audits += [
        Audit("P_norm", opnorm(P), P_bound),
        Audit("diagonalization", diag_err, 1e-12 * opnorm(P) ** 2 * nA),
        Audit("g_prime_bound", g.analytic_norm(params.r), eps_p),
        Audit("A_dd_norm", opnorm(A_dd), slack * 2 * eps ** sigma, atol=rnd),
        Audit("t_bound", abs(t), slack * eps ** sigma, atol=rnd),
        Audit("v_bound", abs(v), slack * eps_p * math.exp(-float(np.abs(n_star).sum()) * params.r), atol=rnd),
        Audit("B_strip", B.analytic_norm(params.r_prime), slack * nb * eps ** (-params.r_prime / dr)),
        Audit("B_c0", B0, slack * nb),
        Audit("f_plus_bound", f_plus.analytic_norm(params.r_prime), slack * fp_rhs, Np > 2 * N ** 2),
        Audit("Y_bound", rem.Y.analytic_norm(params.r), slack * eps_p ** 0.5),
        Audit("g_re_bound", g_re.analytic_norm(params.r), slack * 2 * eps_p),
        Audit("unique_site", len(sites), 1, False),
        Audit("eta_condition", 13 * nA ** 2 * eps_p ** 0.5, eta, False),
        Audit("N_prime_margin", 2 * N ** 2, Np, False),
        Audit("plus_sign", 0 if sign > 0 else 1, 0, False),
    ]
    return KamStepResult("Resonant", B, A_plus, f_plus, audits, n_star=tuple(int(k) for k in n_star),
                         rho_pre=float(rho_rot), A_dd=A_dd, sign=sign, iterations=rem.iterations,
                         degree_shift=tuple(int(k) for k in n_su), dropped=dropped,
                         A_tilde=np.real(MINV @ A_tilde @ M))
