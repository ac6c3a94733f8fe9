"""Schrodinger operators (H x)_n = x_{n+1} + x_{n-1} + lam V(theta + n alpha) x_n.

Rotation number, IDS, spectrum estimates, resonance strata and the quantitative
checks built on top of the KAM scheme.
"""
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigvalsh_tridiagonal

from . import kernels
from .cocycle import Cocycle, is_uniformly_hyperbolic, lyapunov_exponent, rotation_stats, spread_phases
from .fourier import FourierSeries
from .frequency import torus_distance
from .kam_scheme import SchemeError, SchemeParams, run_scheme
from .kam_step import GateError, KamError, _lattice
from .lie2 import Lie2Error, exp2, log2

log = logging.getLogger(__name__)

IDS_TOL = 5e-3
REDUCED = 1e-12
GROWTH_BUDGET = 10 ** 7


class SpectralError(RuntimeError):
    pass


@dataclass
class SchrodingerModel:
    V: FourierSeries
    lam: float
    freq: object
    theta: float = 0.0

    def __post_init__(self):
        if self.V.kind not in ("real", "complex"):
            raise SpectralError("V must be a scalar series")
        if self.V.realness_defect() > 1e-12 * max(1.0, self.V.l1_mass()):
            raise SpectralError("V must be real valued")
        self.V = self.V.with_kind("real")

    @property
    def W(self):
        return self.V.scale(self.lam).with_kind("real")

    @property
    def sup_potential(self):
        return abs(self.lam) * self.V.l1_mass()

    @classmethod
    def almost_mathieu(cls, lam, freq, theta=0.0):
        """V = 2 cos(theta)."""
        V = FourierSeries.from_modes({(1,): 1.0, (-1,): 1.0}, 1, "real")
        return cls(V, lam, freq, theta)


def constant_part(E):
    return np.array([[E, -1.0], [1.0, 0.0]])


def normal_form(model, E, grid=None):
    """(A, f) with S_E = A e^{f}: f = log(A^{-1} S_E) sample-wise, then Fourier-fitted."""
    W = model.W
    R = max(W.radius, 1)
    G = grid or 4 * (2 * R + 1)
    if model.freq.dim != 1:
        raise SpectralError("sample-wise factorization is implemented on T^1")
    th = (np.arange(G) * (2 * math.pi / G))[:, None]
    w = np.real(W.eval(th))
    A = constant_part(E)
    U = np.zeros((G, 2, 2))
    U[:, 0, 0] = 1.0
    U[:, 1, 1] = 1.0
    U[:, 1, 0] = w  # A^{-1} S_E(theta) = [[1, 0], [W, 1]]
    logs = np.empty((G, 2, 2))
    for i in range(G):
        logs[i] = np.real(log2(U[i], real=True))
    f = FourierSeries.from_samples(logs, 1, "mat_real", max_mode=R)
    err = float(np.max(np.abs(np.real(f.eval(th)) - logs)))
    if err > 1e-10 * max(1.0, float(np.max(np.abs(logs)))):
        raise SpectralError(f"Fourier fit of log(A^-1 S) off by {err:.3e}")
    return A, f


def schrodinger_cocycle(model, E):
    """General-form cocycle S_E with .normal_form = (A, f) or None and .diagnostic."""
    c = Cocycle.schrodinger_cocycle(model.freq, E, model.W)
    try:
        c.normal_form = normal_form(model, E)
        c.diagnostic = None
    except (Lie2Error, SpectralError) as exc:
        c.normal_form = None
        c.diagnostic = str(exc)
    return c


# -- rotation number and IDS -------------------------------------------------------------

def rotation(model, E, n_iters=20_000):
    c = Cocycle.schrodinger_cocycle(model.freq, E, model.W)
    return rotation_stats(c, n_iters, model.theta)["rho"]


def finite_volume_eigenvalues(model, n_sites=2000, n_phases=8):
    """Eigenvalues of the Dirichlet truncation on n_sites, one sorted row per phase."""
    phases = spread_phases(model.freq.dim, n_phases, model.theta)
    out = np.empty((n_phases, n_sites))
    off = np.ones(n_sites - 1)
    for i, th in enumerate(phases):
        pts = th[None, :] + np.arange(n_sites)[:, None] * model.freq.alpha[None, :]
        diag = np.real(model.W.eval(pts))
        out[i] = eigvalsh_tridiagonal(diag, off)
    return out


def ids_counting(model, E, eigs=None, n_sites=2000, n_phases=8):
    """Fraction of finite-volume eigenvalues <= E, averaged over phases."""
    if eigs is None:
        eigs = finite_volume_eigenvalues(model, n_sites, n_phases)
    E = np.atleast_1d(np.asarray(E, dtype=float))
    counts = np.stack([np.searchsorted(row, E, side="right") for row in eigs])
    out = counts.mean(axis=0) / eigs.shape[1]
    return out if out.size > 1 else float(out[0])


def ids(model, E, n_iters=20_000, eigs=None, check=True):
    """N(E) = 1 - rho(E)/pi, cross-checked against eigenvalue counting."""
    N_rot = 1.0 - rotation(model, E, n_iters) / math.pi
    out = {"E": float(E), "N": N_rot}
    if check:
        N_cnt = ids_counting(model, E, eigs)
        out["N_count"] = N_cnt
        out["agree"] = bool(abs(N_rot - N_cnt) <= IDS_TOL)
        if not out["agree"]:
            log.warning("IDS cross-check failed at E=%.6g: %.5f vs %.5f", E, N_rot, N_cnt)
    return out


# -- spectrum -----------------------------------------------------------------------------

def _uh_flag(args):
    model, E, horizon = args
    c = Cocycle.schrodinger_cocycle(model.freq, E, model.W)
    return is_uniformly_hyperbolic(c, horizon=horizon)[0]


def _pool_map(fn, items, jobs):
    if jobs and jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


def spectrum_estimate(model, E_grid, eigs=None, horizon=64, jobs=1):
    """Intervals of E that are not UH-certified and lie within a grid step of the eigenvalue cloud.

    Grid points whose neighbours carry the opposite mark form the uncertain fringe.
    """
    E_grid = np.asarray(E_grid, dtype=float)
    h = float(np.max(np.diff(E_grid))) if E_grid.size > 1 else 1e-3
    if h > 1e-3 * (1 + 1e-9):
        raise SpectralError("grid resolution must be at most 1e-3")
    if eigs is None:
        eigs = finite_volume_eigenvalues(model)
    cloud = np.sort(eigs.ravel())
    pos = np.clip(np.searchsorted(cloud, E_grid), 1, cloud.size - 1)
    dist = np.minimum(np.abs(cloud[pos] - E_grid), np.abs(cloud[pos - 1] - E_grid))
    # per-phase level spacing around E: finite-volume levels are that far apart even inside the spectrum
    k = 2 * eigs.shape[0]
    hi = np.clip(pos + k, 0, cloud.size - 1)
    lo = np.clip(pos - k, 0, cloud.size - 1)
    spacing = (cloud[hi] - cloud[lo]) / np.maximum(hi - lo, 1) * eigs.shape[0]
    near = dist <= np.maximum(h, 2 * spacing)
    # off-cloud energies by more than a grid step are never candidates
    cand = np.flatnonzero(near)
    uh = np.zeros(E_grid.size, dtype=bool)
    flags = _pool_map(_uh_flag, [(model, float(E_grid[i]), horizon) for i in cand], jobs)
    uh[cand] = flags
    marked = near & ~uh
    nb = np.zeros_like(marked)
    nb[1:] |= marked[1:] != marked[:-1]
    nb[:-1] |= marked[:-1] != marked[1:]
    uncertain = nb
    intervals = []
    i = 0
    while i < E_grid.size:
        if marked[i]:
            j = i
            while j + 1 < E_grid.size and marked[j + 1]:
                j += 1
            intervals.append((float(E_grid[i] - h / 2), float(E_grid[j] + h / 2)))
            i = j + 1
        else:
            i += 1
    return {"intervals": intervals, "marked": marked, "uh": uh, "uncertain": uncertain, "step": h}


def spectral_energies(est, E_grid, count):
    """count marked grid energies, evenly spread over the marked set."""
    E_grid = np.asarray(E_grid)
    idx = np.flatnonzero(est["marked"])
    if idx.size < count:
        raise SpectralError(f"only {idx.size} spectral grid points")
    pick = idx[np.round(np.linspace(0, idx.size - 1, count)).astype(int)]
    return E_grid[pick]


# -- stratification -----------------------------------------------------------------------

@dataclass
class StratifiedEnergy:
    E: float
    m: int  # None when the run could not be classified
    n_star: tuple = None
    cause: str = None
    record: object = field(default=None, repr=False)
    run: object = field(default=None, repr=False)
    checks: dict = field(default_factory=dict)

    def to_json(self):
        return {"E": self.E, "m": self.m, "n_star": list(self.n_star) if self.n_star else None,
                "cause": self.cause, "checks": self.checks}


def stratify_one(model, E, params):
    A, f = normal_form(model, E)
    p = SchemeParams(**{k: v for k, v in params.as_dict().items()})
    try:
        run = run_scheme(A, f, p, model.freq)
    except (GateError, KamError, SchemeError, Lie2Error) as exc:
        return StratifiedEnergy(float(E), None, cause=f"{type(exc).__name__}: {exc}")
    res = run.resonant_steps
    if res:
        first = res[0]
        return StratifiedEnergy(float(E), first.j, first.n_star, run.stop_cause, first, run)
    final = run.records[-1].f_prime_c0 if run.records else f.c0_norm()
    if final <= REDUCED:
        return StratifiedEnergy(float(E), 0, None, run.stop_cause, None, run)
    return StratifiedEnergy(float(E), None, cause=f"no resonance, final perturbation {final:.3e}", run=run)


def _stratify_task(args):
    return stratify_one(*args)


def stratify(model, E_list, params, jobs=1):
    return _pool_map(_stratify_task, [(model, float(E), params) for E in E_list], jobs)


def check_rotation_localization(entry, model, params, rho=None, n_iters=20_000, slack=None):
    """Some 0 < |n| <= N_m with |2 rho(E) - <n, alpha>|_T <= 5 eps_{l_m}^sigma (times slack)."""
    if entry.m is None or entry.m < 1:
        return {"skipped": True, "pass": True}
    slack = params.slack if slack is None else slack
    eps = entry.record.eps_lj
    lm = entry.record.l_j
    if rho is None:
        rho = rotation(model, entry.E, n_iters)
    N_m = 5 * lm * math.log(1 / eps)
    ns = _lattice(model.freq.dim, N_m)
    d = torus_distance(2 * rho - ns @ model.freq.alpha)
    bound = 5 * eps ** params.sigma * slack
    ok = np.flatnonzero(d <= bound)
    best = int(np.argmin(d))
    return {"skipped": False, "pass": bool(ok.size), "bound": bound, "N_m": N_m, "rho": rho,
            "best_n": ns[best].tolist(), "best_distance": float(d[best]),
            "n_star_distance": float(torus_distance(2 * rho - np.dot(entry.n_star, model.freq.alpha)))}


def growth_profile(model, E, horizon, n_phases=256):
    """max over phases of ||A_s(theta)|| for s = 1..horizon, and whether the horizon was cut."""
    truncated = horizon > GROWTH_BUDGET
    n = int(min(horizon, GROWTH_BUDGET))
    phases = spread_phases(model.freq.dim, n_phases, model.theta)
    frame = np.tile(np.eye(2), (n_phases, 1, 1))
    prof = np.zeros(n)
    W = model.W
    chunk = 8192
    for s in range(0, n, chunk):
        m = min(chunk, n - s)
        pts = phases[:, None, :] + (s + np.arange(m))[None, :, None] * model.freq.alpha[None, None, :]
        v = np.ascontiguousarray(np.real(W.eval(pts)), dtype=float)
        norms = kernels.schrodinger_growth(float(E), v, frame)
        prof[s:s + m] = norms.max(axis=0)
    return prof, truncated


def transfer_growth_check(model, entry, params, c_h=1.0, n_phases=256, uh_horizon=256):
    """sup_{s <= c eps^{-1+sigma/2}} sup_theta ||A_s|| against slack eps^{-2 sigma/9}."""
    if entry.m is None or entry.m < 1:
        raise SpectralError("transfer growth check needs a resonant entry")
    c = Cocycle.schrodinger_cocycle(model.freq, entry.E, model.W)
    if is_uniformly_hyperbolic(c, horizon=uh_horizon)[0]:
        raise SpectralError("energy is UH-certified, hence outside the spectrum")
    eps = entry.record.eps_lj
    horizon = int(math.ceil(c_h * eps ** (-1 + params.sigma / 2)))
    prof, truncated = growth_profile(model, entry.E, horizon, n_phases)
    sup = float(prof.max())
    bound = params.slack * eps ** (-2 * params.sigma / 9)
    return {"pass": bool(sup <= bound), "sup": sup, "bound": bound, "margin": bound / sup,
            "horizon": horizon, "truncated": truncated, "profile": prof}


# -- Holder checks ------------------------------------------------------------------------

def _fit(x, y):
    slope, const = np.polyfit(np.log(x), np.log(y), 1)
    return float(slope), float(math.exp(const))


def holder_fit_ids(model, E, eps_list, n_iters=20_000, lo=0.45, hi=1.6):
    eps_list = np.asarray(sorted(eps_list), dtype=float)
    if eps_list[-1] / eps_list[0] < 10 ** 1.5:
        raise SpectralError("eps_list must span at least 1.5 decades")
    inc = np.array([ids(model, E + e, n_iters, check=False)["N"] - ids(model, E - e, n_iters, check=False)["N"]
                    for e in eps_list])
    if np.any(inc < IDS_TOL):
        raise SpectralError(f"IDS increments below {IDS_TOL} (min {inc.min():.3e}); enlarge eps_list")
    slope, C = _fit(eps_list, inc)
    return {"exponent": slope, "constant": C, "increments": inc.tolist(), "pass": bool(lo <= slope <= hi)}


def kicked(model, E, delta, X=None):
    """Cocycle theta -> S_E(theta) exp(delta X) with a fixed traceless direction X."""
    X = np.array([[1.0, 0.0], [0.0, -1.0]]) if X is None else np.asarray(X, dtype=float)
    K = np.real(exp2(delta * X))
    S = Cocycle.schrodinger_cocycle(model.freq, E, model.W).map
    return Cocycle.general(model.freq, S.rmul(K).with_kind("mat_real")), float(np.linalg.norm(K - np.eye(2), 2))


def holder_fit_le(model, E, deltas, n_iters=20_000, n_phases=8):
    base = lyapunov_exponent(Cocycle.schrodinger_cocycle(model.freq, E, model.W), n_iters, n_phases)
    sizes, diffs, noise = [], [], []
    for d in deltas:
        c, size = kicked(model, E, d)
        st = lyapunov_exponent(c, n_iters, n_phases)
        sizes.append(size)
        diffs.append(abs(st.le_estimate - base.le_estimate))
        noise.append(3 * (st.le_std_error + base.le_std_error) + 2.0 / n_iters)
    sizes, diffs, noise = map(np.asarray, (sizes, diffs, noise))
    if np.all(diffs <= noise):
        return {"exponent": None, "verdict": "flat", "pass": True, "diffs": diffs.tolist()}
    good = diffs > noise
    if good.sum() < 2:
        return {"exponent": None, "verdict": "inconclusive", "pass": True, "diffs": diffs.tolist()}
    slope, C = _fit(sizes[good], diffs[good])
    return {"exponent": slope, "constant": C, "verdict": "fit", "pass": bool(slope >= 0.45),
            "diffs": diffs.tolist()}


# -- gap labels ---------------------------------------------------------------------------

def gap_label(model, E, max_m=100, n_iters=20_000, rho=None):
    """m minimizing |2 rho(E) - <m, alpha>|_T over |m| <= max_m (m = 0 included)."""
    if rho is None:
        rho = rotation(model, E, n_iters)
    ns = np.concatenate([np.zeros((1, model.freq.dim), dtype=int), _lattice(model.freq.dim, max_m)])
    d = torus_distance(2 * rho - ns @ model.freq.alpha)
    order = np.argsort(d, kind="stable")
    best, second = d[order[0]], d[order[1]]
    decisive = bool(best < 1e-4 and second > 10 * best)
    return {"m": ns[order[0]].tolist(), "distance": float(best), "runner_up": float(second),
            "decisive": decisive, "rho": rho}


# -- measure-cover report -----------------------------------------------------------------

def _cover_multiplicity_two(intervals):
    """Sub-family covering the union with every point in at most two chosen intervals."""
    order = sorted(range(len(intervals)), key=lambda i: (intervals[i][0], -intervals[i][1]))
    chosen = []
    reach = -math.inf
    k = 0
    while k < len(order):
        i = order[k]
        a, b = intervals[i]
        if b <= reach:
            k += 1
            continue
        # among intervals starting at or before reach (or the next start), take the one reaching farthest
        start = a if a > reach else reach
        best = i
        while k < len(order) and intervals[order[k]][0] <= start:
            if intervals[order[k]][1] > intervals[best][1]:
                best = order[k]
            k += 1
        chosen.append(best)
        reach = intervals[best][1]
    return chosen


def cover_multiplicity(intervals, chosen):
    pts = sorted({x for i in chosen for x in intervals[i]})
    mids = [(u + v) / 2 for u, v in zip(pts, pts[1:])]
    return max((sum(intervals[i][0] < x < intervals[i][1] for i in chosen) for x in mids), default=0)


def measure_cover_experiment(model, stratified, m, C=1.0, n_phases=64, budget=10 ** 5):
    """Bound (not the measure itself) on mu(K_m) from the cover by J_m(E) intervals."""
    entries = [e for e in stratified if e.m == m]
    if not entries:
        return {"m": m, "count": 0, "bound": 0.0, "intervals": [], "label": "bound"}
    sigma = entries[0].run.params.sigma
    tau = model.freq.tau
    rows, intervals = [], []
    for e in entries:
        eps = e.record.eps_lj
        rad = C * eps ** (2 * sigma / 3)
        horizon = int(min(math.ceil(C / rad), budget))
        prof, _ = growth_profile(model, e.E, horizon, n_phases)
        local = C * rad * float(np.max(prof) ** 2)
        rows.append({"E": e.E, "radius": rad, "horizon": horizon, "bound": local})
        intervals.append((e.E - rad, e.E + rad))
    chosen = _cover_multiplicity_two(intervals)
    total = float(sum(rows[i]["bound"] for i in chosen))
    lm = entries[0].record.l_j
    return {"m": m, "count": len(entries), "chosen": chosen, "multiplicity": cover_multiplicity(intervals, chosen),
            "bound": total, "reference": lm ** (-tau / 5), "rows": rows, "label": "bound"}


# -- sweeps -------------------------------------------------------------------------------

def sweep_row(args):
    model, E, n_iters, n_phases, horizon = args
    c = Cocycle.schrodinger_cocycle(model.freq, E, model.W)
    st = lyapunov_exponent(c, n_iters, n_phases, model.theta)
    uh = is_uniformly_hyperbolic(c, horizon=horizon)[0]
    return E, st, uh


def sweep(model, E_grid, n_iters=20_000, n_phases=8, horizon=64, jobs=1):
    return _pool_map(sweep_row, [(model, float(E), n_iters, n_phases, horizon) for E in E_grid], jobs)
