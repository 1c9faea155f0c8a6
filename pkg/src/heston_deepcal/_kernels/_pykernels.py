"""Pure numpy implementations of the hot kernels.

``_ckernels.pyx`` mirrors these functions operation for operation; the two
must agree (the Monte Carlo kernel bit for bit).
"""
import numpy as np
from scipy.special import ndtri

NAME = "numpy"

# splitmix64 constants
GOLDEN = np.uint64(0x9E3779B97F4A7C15)
MIX1 = np.uint64(0xBF58476D1CE4E5B9)
MIX2 = np.uint64(0x94D049BB133111EB)
TWO_M53 = 2.0 ** -53


def mix64(z):
    z = np.asarray(z, dtype=np.uint64)
    z = (z ^ (z >> np.uint64(30))) * MIX1
    z = (z ^ (z >> np.uint64(27))) * MIX2
    return z ^ (z >> np.uint64(31))


def seed_key(seed):
    """Stream key for an integer seed (any Python int, reduced mod 2**64)."""
    return int(mix64(np.array([seed % (1 << 64)], dtype=np.uint64))[0])


def counter_uniforms(key, counters):
    """Uniforms in (0, 1) for the given 64-bit counters under ``key``."""
    c = np.asarray(counters, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = mix64(np.uint64(key) + (c + np.uint64(1)) * GOLDEN)
    return ((z >> np.uint64(11)).astype(np.float64) + 0.5) * TWO_M53


def _log1p_over(q):
    """log(1 + q) / q for complex q, exact limit 1 at q = 0."""
    q = np.asarray(q, dtype=complex)
    out = np.empty_like(q)
    small = np.abs(q) < 1e-4
    qs = q[small]
    out[small] = 1.0 - qs / 2.0 + qs * qs / 3.0 - qs * qs * qs / 4.0
    qb = q[~small]
    out[~small] = np.log(1.0 + qb) / qb
    return out


def riccati_cd(u, tau, kappa, theta, sigma, rho):
    """C(tau, u) and D(tau, u) for the log-price characteristic exponent.

    Uses the rotation-count-free arrangement: d on the principal branch,
    g = (b - d)/(b + d), with every 1/sigma^2 factor cancelled analytically so
    sigma -> 0 stays well conditioned.
    """
    u = np.asarray(u, dtype=complex)
    iu = 1j * u
    b = kappa - rho * sigma * iu
    a2 = u * u + iu
    d = np.sqrt(b * b + sigma * sigma * a2)
    bpd = b + d
    r_minus = -a2 / bpd
    g = -(sigma * sigma) * a2 / (bpd * bpd)
    e = np.exp(-d * tau)
    one_m_e = 1.0 - e
    big_d = r_minus * one_m_e / (1.0 - g * e)
    q_over_s2 = -a2 * one_m_e / (bpd * bpd * (1.0 - g))
    q = (sigma * sigma) * q_over_s2
    big_c = kappa * theta * (r_minus * tau - 2.0 * q_over_s2 * _log1p_over(q))
    return big_c, big_d


def p_integrands(nodes, tau, kappa, theta, sigma, rho, v0):
    """Forward-centred P1/P2 integrand kernels at real nodes phi > 0.

    Returns complex arrays psi1, psi2 such that, with y = ln(F/K),
    P_j = 1/2 + 1/pi * int Re[exp(i phi y) psi_j(phi)] dphi.
    """
    phi = np.asarray(nodes, dtype=float)
    c2, d2 = riccati_cd(phi, tau, kappa, theta, sigma, rho)
    c1, d1 = riccati_cd(phi - 1j, tau, kappa, theta, sigma, rho)
    iphi = 1j * phi
    psi1 = np.exp(c1 + d1 * v0) / iphi
    psi2 = np.exp(c2 + d2 * v0) / iphi
    return psi1, psi2


def simulate_log_spot(log_s0, rate, kappa, theta, sigma, rho, v0, tau, n_steps, key, path_start, n_paths):
    """Terminal log-spot for paths [path_start, path_start + n_paths).

    Log-Euler for the spot, full-truncation Euler for the variance. Path p,
    step n consumes counters p*2*n_steps + 2n (spot shock) and + 2n + 1.
    """
    dt = tau / n_steps
    sq = np.sqrt(1.0 - rho * rho)
    paths = np.arange(path_start, path_start + n_paths, dtype=np.uint64)
    base = paths * np.uint64(2 * n_steps)
    x = np.full(n_paths, log_s0, dtype=float)
    v = np.full(n_paths, v0, dtype=float)
    for n in range(n_steps):
        z1 = ndtri(counter_uniforms(key, base + np.uint64(2 * n)))
        z2 = ndtri(counter_uniforms(key, base + np.uint64(2 * n + 1)))
        vp = np.maximum(v, 0.0)
        sdt = np.sqrt(vp * dt)
        x = x + (rate - 0.5 * vp) * dt + sdt * z1
        v = v + kappa * (theta - vp) * dt + sigma * sdt * (rho * z1 + sq * z2)
    return x
