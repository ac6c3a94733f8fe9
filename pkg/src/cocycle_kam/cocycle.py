"""Quasi-periodic SL(2,R) cocycles (alpha, A(theta)) and orbit diagnostics."""
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .fourier import FourierSeries, MATRIX_KINDS
from .frequency import Frequency
from .lie2 import exp2, exp_series

log = logging.getLogger(__name__)

CHUNK = 8192
STRIDE = 32


class CocycleError(ValueError):
    pass


class ConvergenceWarning(RuntimeWarning):
    pass


class Cocycle:
    """theta -> A_const exp(f(theta)) (normal form) or theta -> map(theta) (general form).

    f and map are real matrix-valued series; on 2T^d when double_period is set.
    A Schrodinger cocycle additionally carries (E, W) with map = [[E - W, -1], [1, 0]]
    so orbits can use the scalar kernel.
    """

    def __init__(self, freq, A_const=None, f=None, map=None, schrodinger=None):
        if not isinstance(freq, Frequency):
            freq = Frequency(freq)
        self.freq = freq
        self.schrodinger = schrodinger
        if map is not None:
            if A_const is not None or f is not None:
                raise CocycleError("give either (A_const, f) or map")
            if map.kind not in MATRIX_KINDS:
                raise CocycleError("map must be matrix valued")
            self.form = "general"
            self.map = map
            self.A_const = None
            self.f = None
        else:
            A_const = np.asarray(A_const, dtype=float)
            if f is None:
                f = FourierSeries.zeros(freq.dim, "mat_real")
            if f.kind not in MATRIX_KINDS:
                raise CocycleError("f must be matrix valued")
            self.form = "normal"
            self.A_const = A_const
            self.f = f
            self.map = None
        series = self.map if self.map is not None else self.f
        if series.dim != freq.dim:
            raise CocycleError("series dimension does not match the frequency")
        self.double_period = series.double_period

    # -- constructors ------------------------------------------------------
    @classmethod
    def constant(cls, freq, A):
        return cls(freq, A_const=A)

    @classmethod
    def normal(cls, freq, A, f):
        return cls(freq, A_const=A, f=f)

    @classmethod
    def general(cls, freq, series):
        return cls(freq, map=series)

    @classmethod
    def schrodinger_cocycle(cls, freq, E, W):
        """(alpha, S_E^W) with S = [[E - W(theta), -1], [1, 0]]; W a real scalar series."""
        one = FourierSeries.constant(1.0, W.dim, "real")
        zero = FourierSeries.zeros(W.dim, "real")
        mp = FourierSeries.from_entries([[one.scale(E) - W, -one], [one, zero]], kind="mat_real")
        return cls(freq, map=mp, schrodinger=(float(E), W))

    @property
    def domain_tag(self):
        return "2T^d" if self.double_period else "T^d"

    @property
    def period(self):
        return 4 * math.pi if self.double_period else 2 * math.pi

    # -- evaluation ----------------------------------------------------------
    def __call__(self, theta):
        return self.eval(theta)

    def eval(self, theta):
        """Real matrices A(theta), batched over leading axes of theta."""
        if self.form == "general":
            return np.real(self.map.eval(theta))
        X = self.f.eval(theta)
        return np.real(np.einsum("ij,...jk->...ik", self.A_const, exp2(X)))

    def as_series(self, cap=None):
        """The map theta -> A(theta) as a matrix series (exp expanded for normal form)."""
        if self.form == "general":
            return self.map
        E = exp_series(self.f, cap)
        return E.lmul(self.A_const).with_kind("mat_real")

    def orbit_points(self, theta0, n):
        th0 = np.atleast_2d(np.asarray(theta0, dtype=float))
        j = np.arange(n)[:, None]
        return th0[:, None, :] + j[None, :, :] * self.freq.alpha[None, None, :]

    def orbit_matrices(self, theta0, n):
        """(P, n, 2, 2) matrices A(theta0_p + j alpha)."""
        return np.ascontiguousarray(self.eval(self.orbit_points(theta0, n)), dtype=float)

    def check_invariants(self, n_samples=64, seed=0, tol=1e-10):
        rng = np.random.default_rng(seed)
        pts = rng.uniform(0, self.period, size=(n_samples, self.freq.dim))
        A = self.eval(pts)
        det = A[:, 0, 0] * A[:, 1, 1] - A[:, 0, 1] * A[:, 1, 0]
        scale = np.maximum(1.0, np.abs(A).max(axis=(1, 2)) ** 2)
        if np.max(np.abs(det - 1) / scale) > tol:
            raise CocycleError("sampled determinant differs from 1")
        if self.form == "normal":
            X = self.f.eval(pts)
            if np.max(np.abs(X[:, 0, 0] + X[:, 1, 1])) > tol:
                raise CocycleError("f is not traceless")
        return True


@dataclass
class OrbitStats:
    le_estimate: float
    le_std_error: float
    n_iters: int
    rotation_estimate: float
    winding_data: list = field(default_factory=list)
    per_phase_le: np.ndarray = field(default=None, repr=False)
    per_phase_rho: np.ndarray = field(default=None, repr=False)


def spread_phases(dim, n_phases, theta0=0.0, period=2 * math.pi):
    """Deterministic, uniformly spread starting phases (rank-1 lattice)."""
    i = np.arange(n_phases)[:, None]
    gen = np.array([1.0] + [math.sqrt(p) % 1 for p in (2, 3, 5, 7, 11, 13)][: dim - 1])
    return (np.asarray(theta0, dtype=float) + period * ((i * gen[None, :] / n_phases) % 1.0)) % period


def bump_weights(n):
    """Smooth weights exp(-1/(t(1-t))) at t = (k + 1/2)/n, normalized to sum 1.

    Weighted Birkhoff averages with these weights converge faster than any power
    of 1/n for smooth quasi-periodic observables (the boundary terms vanish).
    """
    t = (np.arange(n) + 0.5) / n
    w = np.exp(-1.0 / (t * (1.0 - t)))
    return w / math.fsum(w)


def _run_orbits(c, phases, n_iters, weights=None):
    """Feed the kernel in chunks; returns (log ||A_n||, lifted angle sum, weighted sum) per phase."""
    P = phases.shape[0]
    frame = np.tile(np.eye(2), (P, 1, 1))
    logacc = np.zeros(P)
    vec = np.tile(np.array([1.0, 0.0]), (P, 1))
    rot = np.zeros(P)
    wrot = np.zeros(P)
    done = 0
    while done < n_iters:
        m = min(CHUNK, n_iters - done)
        start = phases + done * c.freq.alpha
        w = None if weights is None else np.ascontiguousarray(weights[done:done + m])
        if c.schrodinger is not None:
            E, W = c.schrodinger
            v = np.ascontiguousarray(np.real(W.eval(c.orbit_points(start, m))), dtype=float)
            kernels.schrodinger_step(E, v, frame, logacc, vec, rot, STRIDE, w, wrot)
        else:
            kernels.matrix_step(c.orbit_matrices(start, m), frame, logacc, vec, rot, STRIDE, w, wrot)
        done += m
    if not (np.all(np.isfinite(logacc)) and np.all(np.isfinite(frame))):
        raise CocycleError("overflow despite renormalization")
    return logacc + np.log(np.linalg.norm(frame, 2, axis=(1, 2))), rot, wrot


def transfer_matrix(c, theta, n):
    """A_n(theta) = A(theta + (n-1) alpha) ... A(theta); A_0 = I."""
    if n < 0:
        raise CocycleError("n must be nonnegative")
    out = np.eye(2)
    if n == 0:
        return out
    th = np.atleast_1d(np.asarray(theta, dtype=float))
    for s in range(0, n, CHUNK):
        m = min(CHUNK, n - s)
        mats = c.eval(th[None, :] + (s + np.arange(m))[:, None] * c.freq.alpha[None, :])
        for A in mats:
            out = A @ out
    return out


def lyapunov_exponent(c, n_iters=100_000, n_phases=8, theta0=0.0):
    if n_iters < 1000:
        raise CocycleError("n_iters must be at least 1000")
    phases = spread_phases(c.freq.dim, n_phases, theta0, c.period)
    logs, _, rhos = _run_orbits(c, phases, n_iters, bump_weights(n_iters))
    les = logs / n_iters
    err = float(np.std(les, ddof=1) / math.sqrt(n_phases)) if n_phases > 1 else 0.0
    le = float(math.fsum(les) / n_phases)
    wind = []
    if c.schrodinger is None:
        try:
            wind = degree_of(c.eval, c.freq.dim, c.double_period).tolist()
        except CocycleError:
            wind = []
    return OrbitStats(le, err, n_iters, float(math.fsum(rhos) / n_phases), wind, les, rhos)


def rotation_stats(c, n_iters=100_000, theta0=0.0):
    """Rotation number from one orbit: smooth-weighted and plain averages of the lifted increments.

    The plain average carries an O(1/n) boundary error; the weighted one is the
    estimate.  converged flags agreement of the two within that O(1/n) budget.
    """
    phase = spread_phases(c.freq.dim, 1, theta0, c.period)
    _, rot, wrot = _run_orbits(c, phase, n_iters, bump_weights(n_iters))
    rho = float(wrot[0])
    plain = float(rot[0]) / n_iters
    spread = abs(rho - plain)
    return {"rho": rho, "plain": plain, "spread": spread, "converged": spread <= 10 * 2 * math.pi / n_iters}


def rotation_number(c, n_iters=100_000, theta0=0.0):
    st = rotation_stats(c, n_iters, theta0)
    if not st["converged"]:
        warnings.warn(f"rotation number windows disagree by {st['spread']:.3e}", ConvergenceWarning)
    return st["rho"]


def degree_of(fn, dim, double_period=False, grid=256, max_grid=1 << 16):
    """Winding of the first column of fn(theta) along each coordinate circle."""
    period = 4 * math.pi if double_period else 2 * math.pi
    out = np.zeros(dim, dtype=int)
    for k in range(dim):
        G = grid
        while True:
            pts = np.zeros((G + 1, dim))
            pts[:, k] = np.arange(G + 1) * (period / G)
            B = np.asarray(fn(pts))
            ang = np.arctan2(np.real(B[:, 1, 0]), np.real(B[:, 0, 0]))
            steps = np.diff(ang)
            steps = (steps + math.pi) % (2 * math.pi) - math.pi
            if np.max(np.abs(steps)) < math.pi / 2:
                turns = steps.sum() / (2 * math.pi)
                if abs(turns - round(turns)) > 1e-6:
                    raise CocycleError("first column does not close up over the period")
                out[k] = int(round(turns))
                break
            G *= 2
            if G > max_grid:
                raise CocycleError("angle jumps persist after grid refinement")
    return out


def degree(B, grid=256):
    """Integer degree vector of a matrix-valued series (or Cocycle) on T^d or 2T^d."""
    if isinstance(B, Cocycle):
        return degree_of(B.eval, B.freq.dim, B.double_period, grid)
    if B.kind not in MATRIX_KINDS:
        raise CocycleError("degree needs a matrix-valued series")
    return degree_of(lambda t: np.real(B.eval(t)), B.dim, B.double_period, grid)


def adjugate(B):
    """[[d, -b], [-c, a]] = B^{-1} for det B = 1."""
    a, b, c_, d = (B.entry(i, j) for i, j in ((0, 0), (0, 1), (1, 0), (1, 1)))
    return FourierSeries.from_entries([[d, -b], [-c_, a]], kind=B.kind)


def conjugate(c, B, cap=None, grid=512, max_cond=1e8):
    """(alpha, B(theta + alpha) A(theta) B(theta)^{-1}) as a general cocycle."""
    if B.dim != c.freq.dim:
        raise CocycleError("conjugacy has the wrong dimension")
    period = 4 * math.pi if B.double_period else 2 * math.pi
    pts = spread_phases(B.dim, grid, 0.0, period)
    vals = np.real(B.eval(pts))
    sv = np.linalg.svd(vals, compute_uv=False)
    cond = float(np.max(sv[:, 0] / sv[:, 1]))
    if not np.isfinite(cond) or cond > max_cond:
        raise CocycleError(f"conjugacy is near singular (condition {cond:.3e})")
    dets = np.linalg.det(vals)
    if np.max(np.abs(dets - 1)) > 1e-8 * max(1.0, cond):
        raise CocycleError("conjugacy must have determinant 1")
    A = c.as_series(cap)
    if B.double_period and not A.double_period:
        A = A.to_double()
    elif A.double_period and not B.double_period:
        B = B.to_double()
    new = B.shift(c.freq.alpha).mul(A, cap).mul(adjugate(B), cap)
    if new.realness_defect() > 1e-10 * max(1.0, new.l1_mass()):
        raise CocycleError("conjugated cocycle is not real")
    return Cocycle(c.freq, map=new.with_kind("mat_real"))


# -- uniform hyperbolicity ---------------------------------------------------------

def _push(c, theta, n, v0=(1.0, 0.0)):
    """Unit vectors A_n(theta - n alpha) v0 for a batch of theta (G, d)."""
    x = np.full(theta.shape[0], v0[0])
    y = np.full(theta.shape[0], v0[1])
    mats = c.orbit_matrices(theta - n * c.freq.alpha, n)
    for j in range(n):
        A = mats[:, j]
        x, y = A[:, 0, 0] * x + A[:, 0, 1] * y, A[:, 1, 0] * x + A[:, 1, 1] * y
        nrm = np.hypot(x, y)
        x, y = x / nrm, y / nrm
    return np.arctan2(y, x)


def _block(c, theta, m):
    out = np.tile(np.eye(2), (theta.shape[0], 1, 1))
    mats = c.orbit_matrices(theta, m)
    for j in range(m):
        out = np.einsum("pij,pjk->pik", mats[:, j], out)
    return out


def _proj_angle(A, phi):
    return np.arctan2(A[:, 1, 0] * np.cos(phi) + A[:, 1, 1] * np.sin(phi),
                      A[:, 0, 0] * np.cos(phi) + A[:, 0, 1] * np.sin(phi))


def _wrap_pi(t):
    return (t + math.pi / 2) % math.pi - math.pi / 2


def _min_stretch(A, lo, hi):
    """min over phi in [lo, hi] of ||A (cos phi, sin phi)||, per sample."""
    S = np.einsum("pki,pkj->pij", A, A)
    p = 0.5 * (S[:, 0, 0] + S[:, 1, 1])
    q = 0.5 * (S[:, 0, 0] - S[:, 1, 1])
    s = S[:, 0, 1]
    quad = lambda phi: p + q * np.cos(2 * phi) + s * np.sin(2 * phi)  # noqa: E731
    best = np.minimum(quad(lo), quad(hi))
    # interior critical points: phi0 + k pi/2
    phi0 = 0.5 * np.arctan2(s, q)
    for k in range(-4, 5):
        cand = phi0 + k * math.pi / 2
        # shift candidate into [lo, lo + pi)
        cand = lo + (cand - lo) % math.pi
        inside = cand <= hi
        best = np.where(inside, np.minimum(best, quad(cand)), best)
    return np.sqrt(np.maximum(best, 0.0))


def is_uniformly_hyperbolic(c, horizon=1000, grid=64, widths=None):
    """One-sided cone-field certificate; returns (flag, certificate or None).

    Cones C(theta) = [u(theta) - w, u(theta) + w] are centred on the push-forward
    u(theta) of a fixed direction.  A block length m certifies when, at every
    grid sample, A_m(theta) maps C(theta) strictly into C(theta + m alpha) and
    stretches every vector of C(theta) by more than 1.
    """
    if horizon > 10_000:
        raise CocycleError("horizon must be at most 1e4")
    widths = widths or [math.pi / 4, math.pi / 8, math.pi / 16, math.pi / 32, math.pi / 64]
    theta = spread_phases(c.freq.dim, grid, 0.0, c.period)
    m = 1
    while m <= horizon:
        back = min(horizon, max(4 * m, 32))
        u0 = _push(c, theta, back)
        u1 = _push(c, theta + m * c.freq.alpha, back)
        Am = _block(c, theta, m)
        best = None
        for w in widths:
            lo = _proj_angle(Am, u0 - w)
            hi = _proj_angle(Am, u0 + w)
            rl = _wrap_pi(lo - u1)
            rh = _wrap_pi(hi - u1)
            inside = (rl > -w) & (rh < w) & (rl < rh)
            if not np.all(inside):
                continue
            stretch = _min_stretch(Am, u0 - w, u0 + w)
            factor = float(stretch.min())
            if factor > 1.0:
                best = {"block": m, "width": w, "centres": u0, "expansion": factor,
                        "per_step": factor ** (1.0 / m), "grid": theta}
        if best is not None:
            return True, best
        m *= 2
    return False, None


def csv_row(E, stats, uh_flag):
    return ",".join(f"{x:.17g}" for x in (E, stats.le_estimate, stats.le_std_error,
                                            stats.rotation_estimate)) + f",{int(bool(uh_flag))}"
