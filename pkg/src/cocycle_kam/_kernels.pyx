# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled orbit kernels; same signatures and semantics as _kernels_py."""
import numpy as np
cimport numpy as cnp
from libc.math cimport atan2, fmod, hypot, log, sqrt, fabs, M_PI

cnp.import_array()

cdef double HALF_PI = 0.5 * M_PI


cdef inline double _wrap_half(double t) nogil:
    # reduce t into [-pi/2, pi/2) like np.mod(t + pi/2, pi) - pi/2
    cdef double u = fmod(t + HALF_PI, M_PI)
    if u < 0:
        u += M_PI
    return u - HALF_PI


cdef inline double _max4(double a, double b, double c, double d) nogil:
    cdef double m = fabs(a)
    if fabs(b) > m:
        m = fabs(b)
    if fabs(c) > m:
        m = fabs(c)
    if fabs(d) > m:
        m = fabs(d)
    return m


cdef inline double _opnorm2(double f00, double f01, double f10, double f11) nogil:
    cdef double s = f00 * f00 + f01 * f01 + f10 * f10 + f11 * f11
    cdef double det = f00 * f11 - f01 * f10
    cdef double disc = s * s - 4 * det * det
    if disc < 0:
        disc = 0
    return sqrt(0.5 * (s + sqrt(disc)))


def schrodinger_step(double E, double[:, ::1] v, double[:, :, ::1] frame, double[::1] logacc,
                     double[:, ::1] vec, double[::1] rot, int stride=32,
                     double[::1] weights=None, double[::1] wrot=None):
    cdef Py_ssize_t P = v.shape[0], n = v.shape[1], p, j
    cdef double f00, f01, f10, f11, t0, t1, c, x, y, nx, ny, psi, raw, nrm, s, r, la, inc, wr = 0
    cdef bint use_w = weights is not None
    with nogil:
        for p in range(P):
            f00 = frame[p, 0, 0]; f01 = frame[p, 0, 1]; f10 = frame[p, 1, 0]; f11 = frame[p, 1, 1]
            x = vec[p, 0]; y = vec[p, 1]
            r = rot[p]; la = logacc[p]
            if use_w:
                wr = wrot[p]
            for j in range(n):
                c = E - v[p, j]
                t0 = c * f00 - f10
                t1 = c * f01 - f11
                f10 = f00; f11 = f01
                f00 = t0; f01 = t1
                nx = c * x - y
                ny = x
                psi = atan2(2.0, c)
                raw = atan2(x * ny - y * nx, x * nx + y * ny)
                inc = psi + _wrap_half(raw - psi)
                r += inc
                if use_w:
                    wr += weights[j] * inc
                nrm = hypot(nx, ny)
                x = nx / nrm; y = ny / nrm
                if (j + 1) % stride == 0:
                    s = _max4(f00, f01, f10, f11)
                    f00 /= s; f01 /= s; f10 /= s; f11 /= s
                    la += log(s)
            s = _max4(f00, f01, f10, f11)
            frame[p, 0, 0] = f00 / s; frame[p, 0, 1] = f01 / s
            frame[p, 1, 0] = f10 / s; frame[p, 1, 1] = f11 / s
            logacc[p] = la + log(s)
            vec[p, 0] = x; vec[p, 1] = y
            rot[p] = r
            if use_w:
                wrot[p] = wr


def matrix_step(double[:, :, :, ::1] mats, double[:, :, ::1] frame, double[::1] logacc,
                double[:, ::1] vec, double[::1] rot, int stride=32,
                double[::1] weights=None, double[::1] wrot=None):
    cdef Py_ssize_t P = mats.shape[0], n = mats.shape[1], p, j
    cdef double a, b, c, d, f00, f01, f10, f11, t00, t01, t10, t11
    cdef double x, y, nx, ny, psi, raw, nrm, s, r, la, inc, wr = 0
    cdef bint use_w = weights is not None
    with nogil:
        for p in range(P):
            f00 = frame[p, 0, 0]; f01 = frame[p, 0, 1]; f10 = frame[p, 1, 0]; f11 = frame[p, 1, 1]
            x = vec[p, 0]; y = vec[p, 1]
            r = rot[p]; la = logacc[p]
            if use_w:
                wr = wrot[p]
            for j in range(n):
                a = mats[p, j, 0, 0]; b = mats[p, j, 0, 1]
                c = mats[p, j, 1, 0]; d = mats[p, j, 1, 1]
                t00 = a * f00 + b * f10; t01 = a * f01 + b * f11
                t10 = c * f00 + d * f10; t11 = c * f01 + d * f11
                f00 = t00; f01 = t01; f10 = t10; f11 = t11
                nx = a * x + b * y
                ny = c * x + d * y
                psi = atan2(c - b, a + d)
                raw = atan2(x * ny - y * nx, x * nx + y * ny)
                inc = psi + _wrap_half(raw - psi)
                r += inc
                if use_w:
                    wr += weights[j] * inc
                nrm = hypot(nx, ny)
                x = nx / nrm; y = ny / nrm
                if (j + 1) % stride == 0:
                    s = _max4(f00, f01, f10, f11)
                    f00 /= s; f01 /= s; f10 /= s; f11 /= s
                    la += log(s)
            s = _max4(f00, f01, f10, f11)
            frame[p, 0, 0] = f00 / s; frame[p, 0, 1] = f01 / s
            frame[p, 1, 0] = f10 / s; frame[p, 1, 1] = f11 / s
            logacc[p] = la + log(s)
            vec[p, 0] = x; vec[p, 1] = y
            rot[p] = r
            if use_w:
                wrot[p] = wr


def schrodinger_growth(double E, double[:, ::1] v, double[:, :, ::1] frame):
    cdef Py_ssize_t P = v.shape[0], n = v.shape[1], p, j
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out_arr = np.empty((P, n))
    cdef double[:, ::1] out = out_arr
    cdef double f00, f01, f10, f11, t0, t1, c
    with nogil:
        for p in range(P):
            f00 = frame[p, 0, 0]; f01 = frame[p, 0, 1]; f10 = frame[p, 1, 0]; f11 = frame[p, 1, 1]
            for j in range(n):
                c = E - v[p, j]
                t0 = c * f00 - f10
                t1 = c * f01 - f11
                f10 = f00; f11 = f01
                f00 = t0; f01 = t1
                out[p, j] = _opnorm2(f00, f01, f10, f11)
            frame[p, 0, 0] = f00; frame[p, 0, 1] = f01; frame[p, 1, 0] = f10; frame[p, 1, 1] = f11
    return out_arr


def matrix_growth(double[:, :, :, ::1] mats, double[:, :, ::1] frame):
    cdef Py_ssize_t P = mats.shape[0], n = mats.shape[1], p, j
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out_arr = np.empty((P, n))
    cdef double[:, ::1] out = out_arr
    cdef double a, b, c, d, f00, f01, f10, f11, t00, t01, t10, t11
    with nogil:
        for p in range(P):
            f00 = frame[p, 0, 0]; f01 = frame[p, 0, 1]; f10 = frame[p, 1, 0]; f11 = frame[p, 1, 1]
            for j in range(n):
                a = mats[p, j, 0, 0]; b = mats[p, j, 0, 1]
                c = mats[p, j, 1, 0]; d = mats[p, j, 1, 1]
                t00 = a * f00 + b * f10; t01 = a * f01 + b * f11
                t10 = c * f00 + d * f10; t11 = c * f01 + d * f11
                f00 = t00; f01 = t01; f10 = t10; f11 = t11
                out[p, j] = _opnorm2(f00, f01, f10, f11)
            frame[p, 0, 0] = f00; frame[p, 0, 1] = f01; frame[p, 1, 0] = f10; frame[p, 1, 1] = f11
    return out_arr
