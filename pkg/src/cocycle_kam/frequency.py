"""Rotation vectors alpha on T^d = R^d / 2 pi Z^d and their Diophantine constants."""
from dataclasses import dataclass, field
from fractions import Fraction
import itertools
import math

import numpy as np

TWO_PI = 2 * math.pi
GOLDEN = (math.sqrt(5) - 1) / 2
SILVER = math.sqrt(2) - 1


class FrequencyError(ValueError):
    pass


def torus_distance(x):
    """inf_j |x - 2 pi j|, elementwise, in [0, pi]."""
    x = np.asarray(x, dtype=float)
    d = np.abs(x - TWO_PI * np.round(x / TWO_PI))
    return float(d) if d.ndim == 0 else d


@dataclass
class ContinuedFraction:
    quotients: list
    rational_flag: bool
    convergents: list  # (p_k, q_k)


def continued_fraction(alpha, depth=30, huge=1e12):
    """Partial quotients of alpha / (2 pi) (the float value is expanded exactly)."""
    if depth > 40:
        raise FrequencyError("depth above 40 exceeds what double precision supports")
    x = Fraction(float(alpha) / TWO_PI)
    qs, convs = [], []
    p0, q0, p1, q1 = 1, 0, 0, 1
    rational = False
    for _ in range(depth + 1):
        a = math.floor(x)
        qs.append(int(a))
        p0, p1 = a * p0 + p1, p0
        q0, q1 = a * q0 + q1, q0
        convs.append((p0, q0))
        frac = x - a
        if frac == 0:
            rational = True
            break
        x = 1 / frac
        if x > huge:
            rational = True
            break
    return ContinuedFraction(qs, rational, convs)


def _lattice_ball(dim, N):
    """Integer vectors 0 < |n|_1 <= N with first nonzero entry positive (one per +-pair)."""
    if dim == 1:
        return np.arange(1, N + 1)[:, None]
    pts = []
    rng = range(-N, N + 1)
    for n in itertools.product(rng, repeat=dim):
        s = sum(abs(k) for k in n)
        if 0 < s <= N:
            first = next(k for k in n if k != 0)
            if first > 0:
                pts.append(n)
    return np.array(pts, dtype=np.int64)


def _phase_distances(alpha_over_2pi, ns):
    """2 pi * ||<n, omega>|| with the fractional part taken before scaling."""
    v = ns @ np.asarray(alpha_over_2pi, dtype=float)
    return TWO_PI * np.abs(v - np.round(v))


@dataclass
class Frequency:
    alpha: np.ndarray
    kappa: float = None
    tau: float = None
    N_max: int = None
    cf: list = field(default=None, repr=False)

    def __post_init__(self):
        self.alpha = np.atleast_1d(np.asarray(self.alpha, dtype=float)) % TWO_PI
        if self.dim == 1:
            self.cf = continued_fraction(self.alpha[0], 30).quotients
        if self.N_max is not None:
            self.check_independence(self.N_max)
            if self.kappa is not None:
                self.verify_dc(self.kappa, self.tau, self.N_max)

    @property
    def dim(self):
        return self.alpha.shape[0]

    @property
    def omega(self):
        return self.alpha / TWO_PI

    @classmethod
    def golden(cls, tau=1.5, N_max=10_000, kappa=None):
        f = cls(np.array([TWO_PI * GOLDEN]))
        return f.with_dc(tau, N_max, kappa)

    @classmethod
    def silver(cls, tau=1.5, N_max=10_000, kappa=None):
        f = cls(np.array([TWO_PI * SILVER]))
        return f.with_dc(tau, N_max, kappa)

    def with_dc(self, tau, N_max, kappa=None):
        if kappa is None:
            kappa = fit_dc_constants(self, tau, N_max)
        return Frequency(self.alpha.copy(), kappa, tau, N_max)

    def pair(self, n):
        """<n, alpha> for integer vector(s) n."""
        return np.asarray(n) @ self.alpha

    def check_independence(self, N_max):
        d = _phase_distances(self.omega, _lattice_ball(self.dim, N_max))
        if d.size and d.min() <= 0:
            raise FrequencyError("alpha is rationally dependent at this cutoff")
        return float(d.min()) if d.size else math.inf

    def verify_dc(self, kappa, tau, N_max):
        ns = _lattice_ball(self.dim, N_max)
        d = _phase_distances(self.omega, ns)
        norms = np.abs(ns).sum(axis=1).astype(float)
        bad = d * norms ** tau < kappa * (1 - 1e-12)
        if np.any(bad):
            raise FrequencyError(f"DC({kappa}, {tau}) fails for n = {ns[np.argmax(bad)].tolist()}")
        return True

    def header(self):
        return {"alpha": self.alpha.tolist(), "kappa": self.kappa, "tau": self.tau, "N_max": self.N_max}

    @classmethod
    def from_config(cls, obj):
        allowed = {"alpha_over_2pi", "tau", "N_max", "kappa"}
        extra = set(obj) - allowed
        if extra:
            raise FrequencyError(f"unknown frequency keys: {sorted(extra)}")
        spec = obj.get("alpha_over_2pi", {"quadratic": "golden"})
        if isinstance(spec, dict):
            q = spec.get("quadratic")
            if set(spec) != {"quadratic"} or q not in ("golden", "silver"):
                raise FrequencyError("quadratic frequency must be 'golden' or 'silver'")
            omega = np.array([GOLDEN if q == "golden" else SILVER])
        else:
            omega = np.atleast_1d(np.asarray(spec, dtype=float))
        tau = float(obj.get("tau", 1.5))
        N_max = int(obj.get("N_max", 10_000 if omega.size == 1 else 40))
        if tau <= omega.size:
            raise FrequencyError("tau must exceed the dimension")
        f = cls(TWO_PI * omega)
        kappa = obj.get("kappa")
        if kappa is None and omega.size > 1:
            raise FrequencyError("for d >= 2 supply kappa explicitly")
        return f.with_dc(tau, N_max, kappa)


def fit_dc_constants(freq, tau, N_max, strict=True):
    """kappa = min over 0 < |n| <= N_max of |n|^tau * torus_distance(<n, alpha>)."""
    if tau <= freq.dim:
        raise FrequencyError("tau must exceed the dimension")
    ns = _lattice_ball(freq.dim, N_max)
    d = _phase_distances(freq.omega, ns)
    norms = np.abs(ns).sum(axis=1).astype(float)
    kappa = float(np.min(d * norms ** tau))
    if strict and kappa < 1e-14:
        raise FrequencyError(f"kappa={kappa:.3e}: effectively Liouville at N_max={N_max}")
    return kappa
