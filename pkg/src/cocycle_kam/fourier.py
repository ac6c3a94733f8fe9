"""Trigonometric polynomials on T^d (or 2T^d) with scalar or 2x2 matrix values.

Coefficients live in a dense box indexed by n in [-R, R]^d.  On the doubled
torus the box index n stands for the half-integer frequency n/2.
"""
import itertools
import json
import math

import numpy as np
from scipy import signal

SCALAR_KINDS = ("real", "complex")
MATRIX_KINDS = ("mat_real", "mat_complex", "su11")
KINDS = SCALAR_KINDS + MATRIX_KINDS
# kinds whose values are real functions: c(-n) = conj(c(n))
REAL_KINDS = ("real", "mat_real")


class FourierError(ValueError):
    pass


def _vshape(kind):
    if kind not in KINDS:
        raise FourierError(f"unknown value kind {kind!r}")
    return () if kind in SCALAR_KINDS else (2, 2)


def _value_norm(c, kind):
    """Pointwise norm of an array of values (abs for scalars, operator 2-norm for matrices)."""
    if kind in SCALAR_KINDS:
        return np.abs(c)
    return np.linalg.norm(c, ord=2, axis=(-2, -1))


class FourierSeries:
    """Immutable trigonometric polynomial.

    coeffs has shape (2R+1,)*dim + vshape; entry at box index n+R is f^(n).
    """

    __slots__ = ("dim", "double_period", "kind", "radius", "coeffs")

    def __init__(self, coeffs, dim=1, kind="complex", double_period=False, _trim=True):
        vs = _vshape(kind)
        c = np.asarray(coeffs, dtype=np.complex128)
        if c.ndim != dim + len(vs) or c.shape[dim:] != vs:
            raise FourierError(f"coeff array shape {c.shape} does not fit dim={dim}, kind={kind}")
        side = c.shape[0]
        if side % 2 != 1 or any(s != side for s in c.shape[:dim]):
            raise FourierError("coefficient box must be a centred cube of odd side")
        R = side // 2
        if _trim and R > 0:
            R_used = _used_radius(c, dim, R)
            if R_used < R:
                sl = (slice(R - R_used, R + R_used + 1),) * dim
                c = c[sl]
                R = R_used
        c = c.copy()
        c.flags.writeable = False
        self.dim = dim
        self.double_period = bool(double_period)
        self.kind = kind
        self.radius = R
        self.coeffs = c

    # -- construction -------------------------------------------------
    @classmethod
    def zeros(cls, dim=1, kind="complex", double_period=False):
        return cls(np.zeros((1,) * dim + _vshape(kind)), dim, kind, double_period)

    @classmethod
    def constant(cls, value, dim=1, kind=None, double_period=False):
        v = np.asarray(value, dtype=np.complex128)
        if kind is None:
            kind = "complex" if v.ndim == 0 else "mat_complex"
        return cls(v.reshape((1,) * dim + _vshape(kind)), dim, kind, double_period)

    @classmethod
    def from_modes(cls, modes, dim=1, kind="complex", double_period=False):
        """Build from a mapping {n: value}; n is an int (d=1) or a tuple of ints."""
        vs = _vshape(kind)
        items = [(_as_index(n, dim), np.asarray(v, dtype=np.complex128)) for n, v in modes.items()]
        R = max([max(abs(k) for k in n) for n, _ in items], default=0)
        c = np.zeros((2 * R + 1,) * dim + vs, dtype=np.complex128)
        for n, v in items:
            c[tuple(k + R for k in n)] += v.reshape(vs)
        return cls(c, dim, kind, double_period)

    @classmethod
    def from_samples(cls, samples, dim=1, kind="complex", double_period=False, max_mode=None):
        """Fourier coefficients of values sampled on a uniform grid of the torus.

        samples has shape (G,)*dim + vshape with grid points theta_k = 2 pi k / G
        (4 pi k / G on the doubled torus).  Modes up to max_mode (default G//2 - 1)
        per coordinate are kept.
        """
        vs = _vshape(kind)
        s = np.asarray(samples, dtype=np.complex128)
        G = s.shape[0]
        axes = tuple(range(dim))
        chat = np.fft.fftn(s, axes=axes) / G ** dim
        K = G // 2 - 1 if max_mode is None else min(int(max_mode), G // 2 - 1)
        idx = np.r_[np.arange(-K, 0) % G, np.arange(0, K + 1)]
        box = chat[np.ix_(*([idx] * dim))] if dim > 1 else chat[idx]
        return cls(box.reshape((2 * K + 1,) * dim + vs), dim, kind, double_period)

    def _new(self, coeffs, kind=None, double_period=None):
        return FourierSeries(coeffs, self.dim, self.kind if kind is None else kind,
                             self.double_period if double_period is None else double_period)

    # -- mode bookkeeping -----------------------------------------------
    def _index_grids(self):
        r = np.arange(-self.radius, self.radius + 1)
        return np.meshgrid(*([r] * self.dim), indexing="ij")

    def lattice_l1(self):
        """l1 norm of the box index for every box cell."""
        return sum(np.abs(g) for g in self._index_grids())

    def freq_norms(self):
        """|n| (l1) of the actual frequency for every box cell (halved on 2T^d)."""
        L = self.lattice_l1().astype(float)
        return L / 2.0 if self.double_period else L

    def coeff_norms(self):
        return _value_norm(self.coeffs, self.kind)

    def support_radius(self):
        """Largest actual frequency norm carrying a nonzero coefficient."""
        nz = self.coeff_norms() > 0
        if not nz.any():
            return 0.0
        return float(self.freq_norms()[nz].max())

    def coefficient(self, n):
        n = _as_index(n, self.dim)
        if any(abs(k) > self.radius for k in n):
            return np.zeros(_vshape(self.kind), dtype=np.complex128)
        return self.coeffs[tuple(k + self.radius for k in n)].copy()

    def mean(self):
        return self.coefficient((0,) * self.dim)

    def items(self):
        """Nonzero (n, value) pairs in lexicographic order of n."""
        R = self.radius
        norms = self.coeff_norms()
        for n in itertools.product(range(-R, R + 1), repeat=self.dim):
            j = tuple(k + R for k in n)
            if norms[j] > 0:
                yield n, self.coeffs[j]

    def is_zero(self):
        return not np.any(self.coeffs)

    # -- pointwise evaluation -------------------------------------------
    def __call__(self, theta):
        return self.eval(theta)

    def eval(self, theta):
        """Evaluate at one point (shape (d,) or scalar for d=1) or a batch (..., d)."""
        th = np.asarray(theta, dtype=float)
        if self.dim == 1 and (th.ndim == 0 or th.shape[-1] != 1):
            th = th[..., None]
        if th.shape[-1] != self.dim:
            raise FourierError(f"point has dimension {th.shape[-1]}, series has {self.dim}")
        batch = th.shape[:-1]
        th = th.reshape(-1, self.dim)
        scale = 0.5 if self.double_period else 1.0
        r = np.arange(-self.radius, self.radius + 1)
        vs = _vshape(self.kind)
        out = self.coeffs.reshape((2 * self.radius + 1,) * self.dim + (-1,))
        # contract one coordinate at a time; the first axis carries the points
        ph = np.exp(1j * scale * np.outer(th[:, 0], r))
        out = np.tensordot(ph, out, axes=(1, 0))
        for ax in range(1, self.dim):
            ph = np.exp(1j * scale * np.outer(th[:, ax], r))
            out = np.einsum("pk,pk...->p...", ph, out)
        out = out.reshape(batch + vs)
        if self.kind in REAL_KINDS:
            return out.real
        return out

    def grid_values(self, G):
        """Values on the uniform product grid with G points per coordinate."""
        R = self.radius
        if G >= 2 * R + 1:
            # grid point j sits at phase 2 pi n j / G for mode n on either torus, so this is an inverse DFT
            vs = _vshape(self.kind)
            buf = np.zeros((G,) * self.dim + vs, dtype=np.complex128)
            idx = np.arange(-R, R + 1) % G
            buf[np.ix_(*([idx] * self.dim))] = self.coeffs
            out = np.fft.ifftn(buf, axes=tuple(range(self.dim))) * G ** self.dim
            return out.real if self.kind in REAL_KINDS else out
        period = 4 * np.pi if self.double_period else 2 * np.pi
        t = np.arange(G) * (period / G)
        pts = np.stack(np.meshgrid(*([t] * self.dim), indexing="ij"), axis=-1)
        return self.eval(pts)

    # -- algebra ----------------------------------------------------------
    def _check_compat(self, other):
        if self.dim != other.dim or self.double_period != other.double_period:
            raise FourierError("series live on different tori")

    def _aligned(self, other):
        R = max(self.radius, other.radius)
        return _pad(self.coeffs, self.dim, self.radius, R), _pad(other.coeffs, other.dim, other.radius, R)

    def __add__(self, other):
        if not isinstance(other, FourierSeries):
            return self + FourierSeries.constant(other, self.dim, self.kind, self.double_period)
        self._check_compat(other)
        a, b = self._aligned(other)
        return self._new(a + b, kind=_join_kind(self.kind, other.kind))

    __radd__ = __add__

    def __neg__(self):
        return self._new(-self.coeffs)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def scale(self, c):
        c = complex(c)
        kind = self.kind
        if c.imag != 0 and kind in REAL_KINDS:
            kind = "complex" if kind == "real" else "mat_complex"
        return self._new(self.coeffs * c, kind=kind)

    def __mul__(self, other):
        if isinstance(other, FourierSeries):
            return self.mul(other)
        return self.scale(other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return self.mul(other)

    def mul(self, other, cap=None):
        """Pointwise product by exact coefficient convolution.

        Matrix-valued factors multiply as matrices.  cap (an l1 radius in actual
        frequency units) truncates the product support.
        """
        self._check_compat(other)
        a, b = self.coeffs, other.coeffs
        sm, om = self.kind in MATRIX_KINDS, other.kind in MATRIX_KINDS
        d = self.dim
        if not sm and not om:
            c = _conv(a, b, d)
        elif sm and om:
            c = np.stack([np.stack([_conv(a[..., i, 0], b[..., 0, j], d) + _conv(a[..., i, 1], b[..., 1, j], d)
                                    for j in range(2)], axis=-1) for i in range(2)], axis=-2)
        elif sm:
            c = np.stack([np.stack([_conv(a[..., i, j], b, d) for j in range(2)], axis=-1)
                          for i in range(2)], axis=-2)
        else:
            c = np.stack([np.stack([_conv(a, b[..., i, j], d) for j in range(2)], axis=-1)
                          for i in range(2)], axis=-2)
        kind = _product_kind(self.kind, other.kind)
        out = self._new(c, kind=kind)
        if cap is not None:
            out = out.truncate(cap)
        return out

    def lmul(self, m):
        """Constant matrix times series: theta -> m f(theta)."""
        m = np.asarray(m, dtype=np.complex128)
        if self.kind in SCALAR_KINDS:
            return self._new(self.coeffs[..., None, None] * m, kind="mat_complex")
        return self._new(np.einsum("ij,...jk->...ik", m, self.coeffs), kind="mat_complex")

    def rmul(self, m):
        m = np.asarray(m, dtype=np.complex128)
        if self.kind in SCALAR_KINDS:
            return self._new(self.coeffs[..., None, None] * m, kind="mat_complex")
        return self._new(np.einsum("...ij,jk->...ik", self.coeffs, m), kind="mat_complex")

    def conjugate_by(self, m, kind=None):
        """theta -> m f(theta) m^{-1} for a constant invertible matrix m."""
        m = np.asarray(m, dtype=np.complex128)
        mi = np.linalg.inv(m)
        c = np.einsum("ij,...jk,kl->...il", m, self.coeffs, mi)
        return self._new(c, kind=kind or "mat_complex")

    def with_kind(self, kind):
        return self._new(self.coeffs, kind=kind)

    def conj(self):
        """Pointwise complex conjugate: c(n) -> conj(c(-n))."""
        flip = tuple(slice(None, None, -1) for _ in range(self.dim))
        return self._new(np.conj(self.coeffs[flip]))

    def entry(self, i, j):
        if self.kind not in MATRIX_KINDS:
            raise FourierError("entry() needs a matrix-valued series")
        return FourierSeries(self.coeffs[..., i, j], self.dim, "complex", self.double_period)

    @staticmethod
    def from_entries(e, kind="mat_complex"):
        """Assemble a matrix series from a 2x2 nested list of scalar series."""
        flat = [e[0][0], e[0][1], e[1][0], e[1][1]]
        R = max(s.radius for s in flat)
        ref = flat[0]
        c = np.stack([_pad(s.coeffs, s.dim, s.radius, R) for s in flat], axis=-1)
        c = c.reshape(c.shape[:-1] + (2, 2))
        return FourierSeries(c, ref.dim, kind, ref.double_period)

    def trace(self):
        return FourierSeries(self.coeffs[..., 0, 0] + self.coeffs[..., 1, 1], self.dim, "complex",
                             self.double_period)

    def det(self, cap=None):
        a, b, c, d = (self.entry(i, j) for i, j in ((0, 0), (0, 1), (1, 0), (1, 1)))
        return a.mul(d, cap) - b.mul(c, cap)

    def shift(self, alpha):
        """theta -> f(theta + alpha)."""
        alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
        if alpha.shape != (self.dim,):
            raise FourierError("shift vector has wrong dimension")
        scale = 0.5 if self.double_period else 1.0
        phase = np.exp(1j * scale * sum(g * a for g, a in zip(self._index_grids(), alpha)))
        vs = _vshape(self.kind)
        return self._new(self.coeffs * phase.reshape(phase.shape + (1,) * len(vs)))

    def derivative(self, order):
        """Partial derivative with multi-index `order` (one entry per coordinate)."""
        order = tuple(int(k) for k in np.atleast_1d(order))
        if len(order) != self.dim:
            raise FourierError("derivative multi-index has wrong dimension")
        scale = 0.5 if self.double_period else 1.0
        fac = np.ones((2 * self.radius + 1,) * self.dim, dtype=np.complex128)
        for g, k in zip(self._index_grids(), order):
            fac = fac * (1j * scale * g) ** k
        vs = _vshape(self.kind)
        return self._new(self.coeffs * fac.reshape(fac.shape + (1,) * len(vs)))

    # -- truncation -------------------------------------------------------
    def truncate(self, N):
        """Keep modes with |n| <= N (actual frequency, l1)."""
        mask = self.freq_norms() <= N
        return self._masked(mask)

    def remainder(self, N):
        """Keep modes with |n| > N."""
        mask = self.freq_norms() > N
        return self._masked(mask)

    def _masked(self, mask):
        vs = _vshape(self.kind)
        return self._new(np.where(mask.reshape(mask.shape + (1,) * len(vs)), self.coeffs, 0))

    def without_mean(self):
        mask = self.lattice_l1() != 0
        return self._masked(mask)

    # -- norms --------------------------------------------------------------
    def analytic_norm(self, r):
        """Weighted l1 majorant sum_n ||f^(n)|| e^{|n| r}; dominates the sup on the strip |Im theta| < r."""
        if r < 0 or not math.isfinite(r):
            raise FourierError("strip width must be finite and nonnegative")
        w = self.coeff_norms()
        nz = w > 0
        if not nz.any():
            return 0.0
        return float(np.sum(w[nz] * np.exp(self.freq_norms()[nz] * r)))

    def l1_mass(self):
        return self.analytic_norm(0.0)

    def c0_norm(self, grid_size=None):
        """Sup of the pointwise norm over a uniform grid."""
        G = grid_size or _default_grid(self)
        return float(np.max(_value_norm(self.grid_values(G), self.kind)))

    def ck_norm(self, k, grid_size=None):
        """Max over |multi-index| <= k of the grid sup of the derivative's norm."""
        span = self.radius * self.dim
        G = grid_size or _default_grid(self)
        if G < 4 * span:
            raise FourierError(f"grid of {G} points too coarse for support radius {span}")
        best = 0.0
        for tot in range(int(k) + 1):
            for order in _multi_indices(self.dim, tot):
                v = self.derivative(order).grid_values(G)
                best = max(best, float(np.max(_value_norm(v, self.kind))))
        return best

    # -- torus conversions --------------------------------------------------
    def to_double(self):
        if self.double_period:
            return self
        R = self.radius
        vs = _vshape(self.kind)
        c = np.zeros((4 * R + 1,) * self.dim + vs, dtype=np.complex128)
        c[(slice(None, None, 2),) * self.dim] = self.coeffs
        return FourierSeries(c, self.dim, self.kind, True)

    def to_torus(self):
        if not self.double_period:
            return self
        R = self.radius
        odd = np.zeros(self.coeffs.shape[:self.dim], dtype=bool)
        for g in self._index_grids():
            odd |= (g % 2 != 0)
        if np.any(self.coeff_norms()[odd] > 0):
            raise FourierError("series has half-integer modes; it is not 2pi-periodic")
        start = R % 2
        c = self.coeffs[(slice(start, None, 2),) * self.dim]
        return FourierSeries(c, self.dim, self.kind, False)

    # -- invariants -------------------------------------------------------
    def realness_defect(self):
        """max ||c(-n) - conj(c(n))||; zero for real-valued functions."""
        flip = tuple(slice(None, None, -1) for _ in range(self.dim))
        return float(np.max(np.abs(self.coeffs[flip] - np.conj(self.coeffs)), initial=0.0))

    def su11_defect(self, n_samples=64, seed=0):
        """Max deviation from the form [[i t, v], [conj v, -i t]] at random points."""
        rng = np.random.default_rng(seed)
        period = 4 * np.pi if self.double_period else 2 * np.pi
        pts = rng.uniform(0, period, size=(n_samples, self.dim))
        X = self.eval(pts)
        d1 = np.abs(X[:, 0, 0] + np.conj(X[:, 1, 1]))
        d2 = np.abs(X[:, 0, 0].real)
        d3 = np.abs(X[:, 1, 0] - np.conj(X[:, 0, 1]))
        return float(max(d1.max(), d2.max(), d3.max()))

    def norm_report(self, r, k=0, grid_size=None):
        return {"analytic_majorant_at_r": self.analytic_norm(r),
                "c0_norm": self.c0_norm(grid_size),
                "ck_norm": self.ck_norm(k, grid_size)}

    # -- serialization ----------------------------------------------------
    def to_json_obj(self):
        out = []
        for n, v in self.items():
            v = np.asarray(v)
            out.append({"n": list(n), "re": np.real(v).ravel().tolist(), "im": np.imag(v).ravel().tolist()})
        return {"dim": self.dim, "double_period": self.double_period, "kind": self.kind, "coeffs": out}

    def to_json(self):
        return json.dumps(self.to_json_obj(), sort_keys=False)

    @classmethod
    def from_json_obj(cls, obj):
        dim, kind = int(obj["dim"]), obj["kind"]
        vs = _vshape(kind)
        modes = {}
        for e in obj["coeffs"]:
            v = np.asarray(e["re"], dtype=float) + 1j * np.asarray(e["im"], dtype=float)
            modes[tuple(e["n"])] = v.reshape(vs)
        if not modes:
            return cls.zeros(dim, kind, bool(obj["double_period"]))
        return cls.from_modes(modes, dim, kind, bool(obj["double_period"]))

    @classmethod
    def from_json(cls, s):
        return cls.from_json_obj(json.loads(s))

    def __repr__(self):
        return (f"FourierSeries(dim={self.dim}, kind={self.kind}, double_period={self.double_period}, "
                f"radius={self.radius})")


# -- module-level operations (thin wrappers) ----------------------------------

def eval_series(f, theta):
    return f.eval(theta)


def analytic_norm(f, r):
    return f.analytic_norm(r)


def ck_norm(f, k, grid_size=None):
    return f.ck_norm(k, grid_size)


def truncate(f, N):
    return f.truncate(N)


def remainder(f, N):
    return f.remainder(N)


def mollify_cutoff(j, s_f=1.0):
    """Band limit K(j) = ceil(j ln(j+1) s_f)."""
    return int(math.ceil(j * math.log(j + 1) * s_f))


def mollify_window(freq_norm, K):
    """Flat-top raised-cosine window: 1 up to K/2, cosine taper to 0 at K."""
    x = np.asarray(freq_norm, dtype=float)
    h = K / 2.0
    w = np.where(x <= h, 1.0, 0.5 * (1.0 + np.cos(np.pi * (x - h) / max(h, 1e-300))))
    return np.where(x >= K, 0.0, w)


def mollify(f, j, k=None, s_f=1.0):
    """Band-limited analytic approximant f_j of (finitely smooth) data f.

    The window does not depend on k; k is accepted for symmetry with the
    approximation estimates it is checked against.
    """
    if j < 1:
        raise FourierError("mollification index must be >= 1")
    K = mollify_cutoff(j, s_f)
    w = mollify_window(f.freq_norms(), K)
    vs = _vshape(f.kind)
    return f._new(f.coeffs * w.reshape(w.shape + (1,) * len(vs)))


def mollify_constants(f, k, js, s_f=1.0, grid_size=None):
    """Measured constants C' in the three approximation estimates, one row per j."""
    fk = f.ck_norm(k, grid_size)
    rows = []
    for j in js:
        fj = mollify(f, j, k, s_f)
        fj1 = mollify(f, j + 1, k, s_f)
        err = (fj - f).ck_norm(k, grid_size)
        strip = fj.analytic_norm(1.0 / j)
        step = (fj1 - fj).analytic_norm(1.0 / (j + 1))
        rows.append({"j": j, "approx_err_k": err, "C_strip": strip / fk if fk else 0.0,
                     "C_step": step * j ** k / fk if fk else 0.0})
    return rows


# -- helpers ------------------------------------------------------------------

def _as_index(n, dim):
    t = (int(n),) if np.ndim(n) == 0 else tuple(int(k) for k in n)
    if len(t) != dim:
        raise FourierError(f"mode {n} does not have dimension {dim}")
    return t


def _pad(c, dim, R, R_new):
    if R_new == R:
        return c
    p = R_new - R
    width = [(p, p)] * dim + [(0, 0)] * (c.ndim - dim)
    return np.pad(c, width)


def _used_radius(c, dim, R):
    nz = np.abs(c).reshape(c.shape[:dim] + (-1,)).max(axis=-1) > 0
    if not nz.any():
        return 0
    used = 0
    for ax in range(dim):
        other = tuple(a for a in range(dim) if a != ax)
        line = nz.any(axis=other) if other else nz
        idx = np.nonzero(line)[0] - R
        used = max(used, int(np.abs(idx).max()))
    return used


def _conv(a, b, dim):
    if dim == 1:
        return np.convolve(a, b)
    return signal.convolve(a, b, mode="full", method="direct")


def _join_kind(k1, k2):
    if k1 == k2:
        return k1
    m1, m2 = k1 in MATRIX_KINDS, k2 in MATRIX_KINDS
    if m1 != m2:
        raise FourierError(f"cannot add {k1} and {k2} series")
    if m1:
        if {k1, k2} <= {"mat_real"}:
            return "mat_real"
        return "mat_complex"
    return "complex"


def _product_kind(k1, k2):
    m = k1 in MATRIX_KINDS or k2 in MATRIX_KINDS
    real = k1 in REAL_KINDS and k2 in REAL_KINDS
    if m:
        return "mat_real" if real else "mat_complex"
    return "real" if real else "complex"


def _multi_indices(dim, total):
    if dim == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _multi_indices(dim - 1, total - first):
            yield (first,) + rest


def _default_grid(f):
    span = max(1, f.radius * f.dim)
    G = 8 * span + 8
    if f.dim > 1:
        G = min(G, 256)
    return int(G)
