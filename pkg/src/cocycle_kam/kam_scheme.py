"""Iterated KAM scheme for C^k data: mollify at scale l_j, step, compose, audit."""
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .cocycle import Cocycle, is_uniformly_hyperbolic
from .fourier import FourierSeries, mollify
from .kam_step import (Audit, GateError, KamError, KamParams, U_ROUND, _grid_points, kam_step,
                       window_N)
from .lie2 import exp2, expm1_series, log1p_series, log2, opnorm, product_minus_identity, schur_upper

log = logging.getLogger(__name__)

SCHEDULE_LIMIT = 2 ** 53
FLOOR = 1e-13
TELESCOPE_GRID = 1024


class SchemeError(RuntimeError):
    pass


@dataclass
class SchemeParams:
    k: int = None
    sigma: float = 0.16
    s: float = 0.05
    M: int = 10
    D: float = None
    D_tilde: float = 4.0
    c_user: object = "auto"
    t_sep: float = 2.0
    max_steps: int = 4
    k0: int = 2
    slack: float = 4.0
    s_f: float = 1.0
    floor: float = FLOOR

    def __post_init__(self):
        if not 0 < self.sigma < 1 / 6:
            raise ValueError("sigma must lie in (0, 1/6)")
        if self.D is None:
            self.D = 2 / self.sigma + 0.5
        if self.s <= 0:
            raise ValueError("s must be positive")
        if self.M < 2:
            raise ValueError("M must be >= 2")
        if self.t_sep < 2:
            raise ValueError("t_sep must be >= 2")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")

    def resolve(self, tau):
        """Fill the default k for this tau and check the regularity constraints."""
        if self.k is None:
            self.k = int(math.floor((self.D + 2) * tau + 2)) + 1
        if not self.k > (self.D + 2) * tau + 2:
            raise ValueError(f"k = {self.k} must exceed (D+2)tau+2 = {(self.D + 2) * tau + 2:.3f}")
        if self.k0 < 0 or self.k0 > self.k0_max(tau):
            raise ValueError(f"k0 = {self.k0} outside [0, {self.k0_max(tau):.3f}]")
        return self

    def k0_max(self, tau):
        return (self.k - 2 * tau - 1.5) / (1 + self.s)

    def s_max(self, tau):
        return 1 / (6 * self.D * tau + 3)

    def as_dict(self):
        return {k: getattr(self, k) for k in ("k", "sigma", "s", "M", "D", "D_tilde", "c_user", "t_sep",
                                               "max_steps", "k0", "slack", "s_f", "floor")}


@dataclass
class StepRecord:
    j: int
    l_j: int
    eps_lj: float
    eps_used: float
    branch: str
    n_star: tuple
    B_c0_norm: float
    B_strip_norm: float
    f_in_c0: float
    f_prime_c0: float
    f_prime_strip_norm: float
    A_lj: np.ndarray
    gamma_j: complex
    c_j: complex
    ck0_norm_of_perturbation: float
    telescoping_residual: float
    rho_shift: float
    audits: list = field(default_factory=list)
    dropped: float = 0.0
    absorbed: str = None
    uh: bool = False
    B_step: FourierSeries = field(default=None, repr=False)
    f_prime: FourierSeries = field(default=None, repr=False)

    @property
    def passed(self):
        return all(a.passed for a in self.audits if a.binding)

    def failed_audits(self):
        return [a.name for a in self.audits if a.binding and not a.passed]

    def to_json(self, with_conjugation=False):
        out = {
            "j": self.j, "l_j": self.l_j, "eps_lj": self.eps_lj, "eps_used": self.eps_used,
            "branch": self.branch, "n_star": list(self.n_star) if self.n_star else None,
            "B_c0_norm": self.B_c0_norm, "B_strip_norm": self.B_strip_norm, "f_in_c0": self.f_in_c0,
            "f_prime_c0": self.f_prime_c0, "f_prime_strip_norm": self.f_prime_strip_norm,
            "A_lj": np.asarray(self.A_lj).tolist(), "gamma_j": [self.gamma_j.real, self.gamma_j.imag],
            "c_j": [self.c_j.real, self.c_j.imag], "ck0_norm": self.ck0_norm_of_perturbation,
            "telescoping_residual": self.telescoping_residual, "rho_shift": self.rho_shift,
            "dropped": self.dropped, "absorbed": self.absorbed, "uh": self.uh,
            "audits": [a.to_json() for a in self.audits],
        }
        if with_conjugation and self.B_step is not None:
            out["B"] = self.B_step.to_json_obj()
        return out


@dataclass
class SchemeRun:
    records: list
    stop_cause: str
    params: SchemeParams
    B_factors: list = field(repr=False, default_factory=list)
    A_final: np.ndarray = None
    f_final: FourierSeries = field(default=None, repr=False)
    diagnostics: list = field(default_factory=list)

    @property
    def passed(self):
        return self.stop_cause != "audit" and all(r.passed for r in self.records)

    @property
    def resonant_steps(self):
        return [r for r in self.records if r.branch == "Resonant"]

    def to_json(self, freq, with_conjugation=False):
        return {
            "header": {"alpha": freq.alpha.tolist(), "kappa": freq.kappa, "tau": freq.tau,
                       "params": self.params.as_dict(), "stop_cause": self.stop_cause,
                       "diagnostics": self.diagnostics},
            "steps": [r.to_json(with_conjugation) for r in self.records],
        }


def schedule(M, s, j_max):
    """l_1 = M, l_{j+1} = [l_j^{1+s}] + 1, cut off before exceeding 2^53."""
    if M < 2 or not s > 0:
        raise ValueError("need M >= 2 and s > 0")
    ls = [int(M)]
    while len(ls) < j_max:
        nxt = math.floor(ls[-1] ** (1 + s)) + 1
        if nxt > SCHEDULE_LIMIT:
            warnings.warn(f"schedule truncated at {len(ls)} scales (next {nxt:.3e} > 2^53)")
            break
        ls.append(int(nxt))
    return ls


def eps_schedule(m, c, normA, params, tau):
    return c / ((2 * normA) ** params.D_tilde * m ** (params.D * tau + 0.5))


def calibrate_c(eps1, l1, normA, params, tau):
    return eps1 * (2 * normA) ** params.D_tilde * l1 ** (params.D * tau + 0.5)


# -- conjugation bookkeeping ------------------------------------------------------------------

def _grid_for(factors, dim, G=TELESCOPE_GRID):
    period = 4 * math.pi if any(B.double_period for B in factors) else 2 * math.pi
    return _grid_points(dim, G, period)


def compose_values(factors, theta):
    """B_j(theta) ... B_1(theta) at the points theta, shape (G, 2, 2)."""
    out = np.broadcast_to(np.eye(2), (theta.shape[0], 2, 2)).copy()
    for B in factors:
        out = np.real(B.eval(theta)) @ out
    return out


def compose_series(factors, dim, cap=None):
    out = FourierSeries.constant(np.eye(2), dim, "mat_real", any(B.double_period for B in factors))
    for B in factors:
        Bj = B if B.double_period or not out.double_period else B.to_double()
        cur = out if out.double_period or not Bj.double_period else out.to_double()
        out = Bj.mul(cur, cap)
    return out


def telescoping_residual(A, f_lj, factors, A_cur, F_cur, freq, G=TELESCOPE_GRID):
    """sup ||Bc(th+alpha) A e^{f_lj(th)} Bc(th)^{-1} - A_cur e^{F(th)}|| and sup ||Bc||."""
    th = _grid_for(factors, f_lj.dim, G)
    Bt = compose_values(factors, th)
    Bs = compose_values(factors, th + freq.alpha)
    lhs = Bs @ (np.asarray(A) @ np.real(exp2(f_lj.eval(th)))) @ np.linalg.inv(Bt)
    rhs = np.asarray(A_cur) @ np.real(exp2(F_cur.eval(th)))
    return (float(np.max(np.linalg.norm(lhs - rhs, 2, axis=(1, 2)))),
            float(np.max(np.linalg.norm(Bt, 2, axis=(1, 2)))))


def absorb_difference(F, f_old, f_new, factors, cap=None):
    """Perturbation F' with A_cur e^{F'} = A_cur e^{F} Bc e^{-f_old} e^{f_new} Bc^{-1}."""
    delta = product_minus_identity([expm1_series(-f_old, cap), expm1_series(f_new, cap)], cap)
    if delta.is_zero():
        return F
    if factors:
        Bc = compose_series(factors, F.dim, cap)
        adj = FourierSeries.from_entries([[Bc.entry(1, 1), -Bc.entry(0, 1)],
                                          [-Bc.entry(1, 0), Bc.entry(0, 0)]], kind=Bc.kind)
        if Bc.double_period:
            delta = delta.to_double()
        delta = Bc.mul(delta, cap).mul(adj, cap)
        if delta.double_period:
            delta = delta.to_torus()
    W = product_minus_identity([expm1_series(F, cap), delta], cap)
    return log1p_series(W, cap).with_kind("mat_real")


# -- hyperbolic constants ---------------------------------------------------------------------

@dataclass
class UHDecision:
    verdict: str  # "uh" | "absorbed" | "uh_uncertified"
    lam: float
    threshold: float
    A_new: np.ndarray
    F_new: FourierSeries
    certificate: dict = None
    norm_before: float = 0.0
    norm_after: float = 0.0


def exclude_uh_or_absorb(A, F, eps, freq, threshold=None, horizon=1000):
    """Handle a constant with real spectrum e^{+-lam}: certify UH or push lam into F."""
    A = np.asarray(A, dtype=float)
    ev = np.linalg.eigvals(A)
    if np.max(np.abs(ev.imag)) > 1e-12 * max(1.0, np.max(np.abs(ev))):
        raise ValueError("constant is elliptic; nothing to exclude or absorb")
    if threshold is None:
        threshold = eps ** 0.25
    T, Z = linalg.schur(A, output="real")
    gam = T[0, 0]
    lam = math.log(abs(gam))
    sgn = 1.0 if gam > 0 else -1.0
    norm_before = F.c0_norm()
    if abs(lam) > threshold:
        ok, cert = is_uniformly_hyperbolic(Cocycle.normal(freq, A, F), horizon=horizon)
        return UHDecision("uh" if ok else "uh_uncertified", lam, threshold, A, F, cert, norm_before,
                          norm_before)
    if lam == 0.0:
        return UHDecision("absorbed", lam, threshold, A, F, None, norm_before, norm_before)
    A_new = Z @ np.array([[sgn, T[0, 1]], [0.0, sgn]]) @ Z.T
    Lam = np.linalg.solve(A_new, A)
    W0 = FourierSeries.constant(Lam - np.eye(2), F.dim, "mat_real")
    if F.is_zero():
        F_new = FourierSeries.constant(np.real(log2(Lam, real=True)), F.dim, "mat_real")
    else:
        F_new = log1p_series(product_minus_identity([W0, expm1_series(F)]), None).with_kind("mat_real")
    return UHDecision("absorbed", lam, threshold, A_new, F_new, None, norm_before, F_new.c0_norm())


# -- the driver -------------------------------------------------------------------------------

def run_scheme(A, f, params, freq, horizon=1000, keep_conjugations=False):
    """Run the scheme on (alpha, A e^{f}); f is real sl(2,R)-valued C^k data.

    Returns a SchemeRun whose records audit every step; the run stops on UH
    certification, a failed binding audit, the floating-point floor or max_steps.
    """
    A = np.asarray(A, dtype=float)
    params.resolve(freq.tau)
    tau, kappa, sigma, slack = freq.tau, freq.kappa, params.sigma, params.slack
    normA = opnorm(A)
    gate = (4 * normA) ** -4
    diagnostics = []
    if params.s > params.s_max(tau):
        diagnostics.append(f"s = {params.s} exceeds 1/(6 D tau + 3) = {params.s_max(tau):.4g}")
    ck = f.ck_norm(params.k)
    if ck > gate:
        raise GateError(f"C^{params.k} norm {ck:.3e} exceeds the entry gate {gate:.3e}")
    ls = schedule(params.M, params.s, params.max_steps + 1)
    if len(ls) < 2:
        raise SchemeError("schedule too short")
    f_cur = mollify(f, ls[0], params.k, params.s_f)
    if params.c_user == "auto":
        e1 = f_cur.analytic_norm(1.0 / ls[0])
        c = calibrate_c(e1 if e1 > 0 else gate, ls[0], normA, params, tau)
    else:
        c = float(params.c_user)
    A_cur = A.copy()
    F = f_cur
    factors = []
    records = []
    stop = "max_steps"
    B0_prev = 1.0
    rho_shift = 0.0
    for j in range(1, len(ls)):
        lj, lnext = ls[j - 1], ls[j]
        r, rp = 1.0 / lj, 1.0 / lnext
        eps_s = eps_schedule(lj, c, normA, params, tau)
        if eps_s < params.floor:
            stop = "floor"
            break
        if j > 1:
            f_new = mollify(f, lj, params.k, params.s_f)
            # same support cap as inside the step, from the scheduled eps at this scale
            cap = 8 * abs(math.log(eps_s)) / (r - rp)
            F = absorb_difference(F, f_cur, f_new, factors, cap)
            f_cur = f_new
        eps_m = F.analytic_norm(r)
        eps = max(eps_s, eps_m)
        if eps_m > eps_s:
            diagnostics.append(f"step {j}: measured |f|_r = {eps_m:.3e} above eps_lj = {eps_s:.3e}")
        kp = KamParams(r, rp, sigma, kappa, tau, eps, slack=slack, D=params.D, D_tilde=params.D_tilde)
        f_in = F.c0_norm()
        try:
            res = kam_step(A_cur, F, kp, freq)
        except GateError:
            if j == 1:
                raise
            stop = "gate"
            break
        except KamError as exc:
            diagnostics.append(f"step {j}: {type(exc).__name__}: {exc}")
            stop = "numeric"
            break
        factors.append(res.B)
        A_cur, F = res.A_plus, res.f_plus.with_kind("mat_real")
        if res.branch == "Resonant":
            rho_shift += float(np.dot(res.n_star, freq.alpha)) / 2
        audits = list(res.audits)
        decision = None
        if abs(np.linalg.eigvals(A_cur).imag).max() <= 1e-12:
            decision = exclude_uh_or_absorb(A_cur, F, eps, freq, horizon=horizon)
            if decision.verdict == "absorbed":
                A_cur, F = decision.A_new, decision.F_new
                audits.append(Audit("absorbed_norm", decision.norm_after,
                                    decision.threshold + decision.norm_before + 1e-15))
        _, _, gamma, cj = schur_upper(A_cur)
        resid, B0 = telescoping_residual(A, f_cur, factors, A_cur, F, freq)
        fp_strip = F.analytic_norm(rp)
        audits += [
            Audit("B_c0", B0, slack * eps ** (-sigma / 2)),
            # bound on the step output; an absorbed lambda has its own audit above
            Audit("f_prime_strip", res.f_plus.analytic_norm(rp), slack * eps ** (3 - sigma)),
            Audit("A_norm", opnorm(A_cur), 2 * normA * (1 + 1e-12)),
            Audit("conjugacy_c_bound", B0 ** 2 * abs(cj), 8 * normA * slack),
            Audit("telescoping", resid, 1e-8 * B0 ** 2),
        ]
        if res.branch == "NonResonant":
            audits.append(Audit("B_chain", B0, (1 + slack * eps ** 0.5) * B0_prev))
        rec = StepRecord(
            j=j, l_j=lj, eps_lj=eps_s, eps_used=eps, branch=res.branch, n_star=res.n_star,
            B_c0_norm=B0, B_strip_norm=res.B.analytic_norm(rp), f_in_c0=f_in, f_prime_c0=F.c0_norm(),
            f_prime_strip_norm=fp_strip, A_lj=A_cur.copy(), gamma_j=gamma, c_j=cj,
            ck0_norm_of_perturbation=F.ck_norm(params.k0), telescoping_residual=resid,
            rho_shift=rho_shift, audits=audits, dropped=res.dropped,
            absorbed=decision.verdict if decision else None, uh=bool(decision and decision.verdict == "uh"),
            B_step=res.B if keep_conjugations else None, f_prime=F)
        records.append(rec)
        log.info("step %d l=%d eps=%.3e %s n*=%s f'=%.3e", j, lj, eps, res.branch, res.n_star, rec.f_prime_c0)
        B0_prev = B0
        if rec.uh:
            stop = "uh"
            break
        if decision is not None and decision.verdict == "uh_uncertified":
            diagnostics.append(f"step {j}: |lambda| = {decision.lam:.3e} above threshold but no UH certificate")
            stop = "audit"
            break
        if not rec.passed:
            diagnostics.append(f"step {j}: failed audits {rec.failed_audits()}")
            stop = "audit"
            break
    return SchemeRun(records, stop, params, factors, A_cur, F, diagnostics)


def verify_resonance_separation(records, t_sep=2.0):
    """Consecutive resonant steps must satisfy eps_{next} < eps_{prev}^{t_sep}."""
    res = [r for r in records if r.branch == "Resonant"]
    pairs = []
    for a, b in zip(res, res[1:]):
        pairs.append({"steps": (a.j, b.j), "eps": (a.eps_lj, b.eps_lj),
                      "pass": bool(b.eps_lj < a.eps_lj ** t_sep)})
    return all(p["pass"] for p in pairs), pairs


def cauchy_bound(k0, l_next, strip_norm):
    return math.factorial(k0) * l_next ** k0 * strip_norm


def ck0_report(records, k0, params=None, tau=None, grid_size=None):
    """Direct C^{k0} norms of each f'_{l_j} against the Cauchy bound k0! l_{j+1}^{k0} |f'|_{1/l_{j+1}}."""
    if params is not None and tau is not None and k0 > params.k0_max(tau):
        raise ValueError(f"k0 = {k0} above the admissible {params.k0_max(tau):.3f}")
    rows = []
    for rec in records:
        l_next = math.floor(rec.l_j ** (1 + params.s)) + 1 if params is not None else None
        if rec.f_prime is None:
            raise ValueError("records do not carry the perturbations")
        if l_next is None:
            raise ValueError("params are needed to recover l_{j+1}")
        strip = rec.f_prime.analytic_norm(1.0 / l_next)
        direct = rec.f_prime.ck_norm(k0, grid_size)
        bound = cauchy_bound(k0, l_next, strip)
        rows.append({"j": rec.j, "direct": direct, "cauchy": bound,
                     "within": bool(direct <= bound * (1 + 1e-12) + 64 * U_ROUND * strip)})
    dec = [b["direct"] < a["direct"] or (a["direct"] == 0 and b["direct"] == 0) for a, b in zip(rows, rows[1:])]
    return {"rows": rows, "within_cauchy": all(r["within"] for r in rows), "decreasing": all(dec)}


def window_sizes(records, params, freq):
    """N used at each step (for reports)."""
    out = []
    for rec in records:
        l_next = math.floor(rec.l_j ** (1 + params.s)) + 1
        kp = KamParams(1.0 / rec.l_j, 1.0 / l_next, params.sigma, freq.kappa, freq.tau, rec.eps_used)
        out.append(window_N(kp))
    return out
