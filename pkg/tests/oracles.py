"""Independent reference implementations used as test oracles.

These avoid the package's own numerics: closed forms where they exist and
mpmath quadrature otherwise.
"""
import math

import mpmath as mp
import numpy as np

HBAR = 0.6582119569  # µeV ns
H = 2 * math.pi * HBAR
KB = 0.08617333262  # µeV / mK


def dos(e, delta, gamma):
    z = complex(e, gamma * delta)
    return abs((z / np.sqrt(z * z - delta * delta)).real)


def iv_zero_temperature(v, gamma):
    """Normalized T = 0 Dynes current I e R_T / Delta at bias v = eV/Delta >= 0."""
    return np.sqrt((v + 1j * gamma) ** 2 - 1).real


def didv_zero_temperature(v, gamma):
    z = v + 1j * gamma
    return (z / np.sqrt(z * z - 1)).real


def forward_rate_mp(E, delta, gamma, T):
    """F(E) by mpmath quadrature, 1/ns."""
    kT = KB * T
    mp.mp.dps = 25

    def n_s(e):
        z = mp.mpc(e, gamma * delta)
        return abs(mp.re(z / mp.sqrt(z * z - delta * delta)))

    def f(x):
        return 1 / (1 + mp.exp(x / kT))

    def integrand(e):
        return n_s(e) * f(e - E) * (1 - f(e))

    lo = min(0.0, E) - 60 * kT - 3 * delta
    hi = max(0.0, E) + 60 * kT + 3 * delta
    pts = sorted({lo, -delta, 0.0, delta, E, hi} | {E - 30 * kT, E + 30 * kT})
    pts = [p for p in pts if lo <= p <= hi]
    val = mp.quad(integrand, pts, maxdegree=10)
    return float(val) / H


def forward_rate_zero_t(E, delta, gamma):
    """T = 0: F(E) = (1/h) int_0^E n_S for E > 0 (0 otherwise)."""
    if E <= 0:
        return 0.0
    z = E + 1j * gamma * delta
    return np.sqrt(z * z - delta * delta).real / H


def gibbs(energies, T):
    e = np.asarray(energies, float)
    w = np.exp(-(e - e.min()) / (KB * T))
    return w / w.sum()


def two_level_relaxation(p0, up, down, t):
    g = up + down
    pss = up / g
    return pss + (p0 - pss) * math.exp(-g * t)


def transmon_omega(phi, omega0, alpha):
    ec = -HBAR * alpha
    ej = (HBAR * omega0 + ec) ** 2 / (8 * ec)
    return (math.sqrt(8 * ec * ej * abs(math.cos(math.pi * phi))) - ec) / HBAR
