# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the kernels in ``_pykernels.py`` (same signatures)."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt
from scipy.special.cython_special cimport ndtri

cnp.import_array()

NAME = "cython"

ctypedef unsigned long long u64

from libc.math cimport exp, log, hypot, atan2, cos, sin, copysign


# Plain real-arithmetic versions; glibc's complex routines spend most of
# their time on special-value handling that finite inputs never need.
cdef inline double complex cexp(double complex z) noexcept nogil:
    cdef double m = exp(z.real)
    return m * cos(z.imag) + 1j * (m * sin(z.imag))


cdef inline double complex clog(double complex z) noexcept nogil:
    return log(hypot(z.real, z.imag)) + 1j * atan2(z.imag, z.real)


cdef inline double cabs(double complex z) noexcept nogil:
    return hypot(z.real, z.imag)


cdef inline double complex csqrt(double complex z) noexcept nogil:
    # principal branch, real part >= 0
    cdef double r = hypot(z.real, z.imag)
    cdef double a, b
    if z.real >= 0.0:
        a = sqrt(0.5 * (r + z.real))
        b = z.imag / (2.0 * a) if a > 0.0 else 0.0
    else:
        b = copysign(sqrt(0.5 * (r - z.real)), z.imag)
        a = z.imag / (2.0 * b)
    return a + 1j * b

cdef u64 GOLDEN = 0x9E3779B97F4A7C15ULL
cdef u64 MIX1 = 0xBF58476D1CE4E5B9ULL
cdef u64 MIX2 = 0x94D049BB133111EBULL
cdef double TWO_M53 = 1.1102230246251565e-16


cdef inline u64 _mix64(u64 z) noexcept nogil:
    z = (z ^ (z >> 30)) * MIX1
    z = (z ^ (z >> 27)) * MIX2
    return z ^ (z >> 31)


cdef inline double _uniform(u64 key, u64 counter) noexcept nogil:
    cdef u64 z = _mix64(key + (counter + 1) * GOLDEN)
    return (<double>(z >> 11) + 0.5) * TWO_M53


cdef inline double complex _log1p_over(double complex q) noexcept nogil:
    if cabs(q) < 1e-4:
        return 1.0 - q / 2.0 + q * q / 3.0 - q * q * q / 4.0
    return clog(1.0 + q) / q


cdef inline void _riccati(double complex u, double tau, double kappa, double theta,
                          double sigma, double rho, double complex *c_out,
                          double complex *d_out) noexcept nogil:
    cdef double complex iu = 1j * u
    cdef double complex b = kappa - rho * sigma * iu
    cdef double complex a2 = u * u + iu
    cdef double complex d = csqrt(b * b + sigma * sigma * a2)
    cdef double complex bpd = b + d
    cdef double complex r_minus = -a2 / bpd
    cdef double complex g = -(sigma * sigma) * a2 / (bpd * bpd)
    cdef double complex e = cexp(-d * tau)
    cdef double complex one_m_e = 1.0 - e
    cdef double complex q_over_s2 = -a2 * one_m_e / (bpd * bpd * (1.0 - g))
    cdef double complex q = (sigma * sigma) * q_over_s2
    d_out[0] = r_minus * one_m_e / (1.0 - g * e)
    c_out[0] = kappa * theta * (r_minus * tau - 2.0 * q_over_s2 * _log1p_over(q))


def p_integrands(nodes, double tau, double kappa, double theta, double sigma,
                 double rho, double v0):
    cdef const double[::1] phi = np.ascontiguousarray(nodes, dtype=np.float64)
    cdef Py_ssize_t n = phi.shape[0], k
    psi1_arr = np.empty(n, dtype=np.complex128)
    psi2_arr = np.empty(n, dtype=np.complex128)
    cdef double complex[::1] psi1 = psi1_arr
    cdef double complex[::1] psi2 = psi2_arr
    cdef double complex c, d, iphi
    with nogil:
        for k in range(n):
            iphi = 1j * phi[k]
            _riccati(phi[k] - 1j, tau, kappa, theta, sigma, rho, &c, &d)
            psi1[k] = cexp(c + d * v0) / iphi
            _riccati(phi[k] + 0j, tau, kappa, theta, sigma, rho, &c, &d)
            psi2[k] = cexp(c + d * v0) / iphi
    return psi1_arr, psi2_arr


def simulate_log_spot(double log_s0, double rate, double kappa, double theta,
                      double sigma, double rho, double v0, double tau,
                      Py_ssize_t n_steps, key, Py_ssize_t path_start,
                      Py_ssize_t n_paths):
    cdef u64 ukey = <u64>key
    cdef double dt = tau / n_steps
    cdef double sq = sqrt(1.0 - rho * rho)
    out_arr = np.empty(n_paths, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t p, n
    cdef u64 base
    cdef double x, v, vp, sdt, z1, z2
    with nogil:
        for p in range(n_paths):
            base = <u64>(path_start + p) * <u64>(2 * n_steps)
            x = log_s0
            v = v0
            for n in range(n_steps):
                z1 = ndtri(_uniform(ukey, base + <u64>(2 * n)))
                z2 = ndtri(_uniform(ukey, base + <u64>(2 * n + 1)))
                vp = v if v > 0.0 else 0.0
                sdt = sqrt(vp * dt)
                x = x + (rate - 0.5 * vp) * dt + sdt * z1
                v = v + kappa * (theta - vp) * dt + sigma * sdt * (rho * z1 + sq * z2)
            out[p] = x
    return out_arr
