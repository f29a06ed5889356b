"""Flux schedule, flux-tunable transmon spectrum and the diagonal Hamiltonian."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import CycleSchedule, DerivedTransmonEnergies, DeviceParams, derive_transmon_energies
from .constants import HBAR
from .errors import ConfigError, HalfFluxError

STROKES = ("prep", "AB", "BC", "CD", "DA")


@dataclass(frozen=True)
class FluxState:
    phi_ext: float
    t: float


@dataclass(frozen=True)
class SpectrumSample:
    t: float
    omega_ge: float
    omega_m: tuple[float, ...]


def _check_window(t, schedule: CycleSchedule):
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(t > schedule.t_end + 1e-9):
        raise ConfigError(f"time outside simulated window [0, {schedule.t_end}] ns")
    return t


def stroke_label(t: float, schedule: CycleSchedule) -> str:
    """Stroke containing time ``t``; the final instant belongs to the last heating stroke."""
    t = float(_check_window(t, schedule))
    if t < schedule.tau_p:
        return "prep"
    u = (t - schedule.tau_p) % schedule.tau_cyc
    if t >= schedule.t_end - 1e-12:
        u = schedule.tau_cyc
    if u < schedule.tau_1:
        return "AB"
    if u < schedule.tau_1 + schedule.tau_2:
        return "BC"
    if u < schedule.tau_1 + schedule.tau_2 + schedule.tau_3:
        return "CD"
    return "DA"


def external_flux(t, schedule: CycleSchedule, cycle_index: int | None = None):
    """External flux (flux quanta) at time(s) ``t`` in ns.

    Piecewise: flat at phi_dc before t_A, sin^2 ramp to phi_dc + phi_ac on
    [t_A, t_B), plateau until t_C, mirrored ramp back until t_D, flat again.
    The ramp rate is pi / (2 tau_1). ``cycle_index`` restricts the lookup to
    one cycle and is checked against ``t`` when given.
    """
    t = _check_window(t, schedule)
    scalar = t.ndim == 0
    t = np.atleast_1d(t)
    w = math.pi / (2.0 * schedule.tau_1)
    u = t - schedule.tau_p
    cyc = np.floor_divide(u, schedule.tau_cyc)
    if cycle_index is not None:
        inside = (u < 0) | (cyc == cycle_index) | (t >= schedule.t_end - 1e-12)
        if not np.all(inside):
            raise ConfigError(f"time not inside cycle {cycle_index}")
    s = np.where(u < 0, -1.0, u - cyc * schedule.tau_cyc)
    t1 = schedule.tau_1
    t2 = t1 + schedule.tau_2
    t3 = t2 + schedule.tau_3
    shape = np.zeros_like(t)
    ramp_up = (s >= 0) & (s < t1)
    plateau = (s >= t1) & (s < t2)
    ramp_down = (s >= t2) & (s < t3)
    shape[ramp_up] = np.sin(w * s[ramp_up]) ** 2
    shape[plateau] = 1.0
    shape[ramp_down] = np.sin(w * (s[ramp_down] - t2) + math.pi / 2) ** 2
    phi = schedule.phi_dc + schedule.phi_ac * shape
    return float(phi[0]) if scalar else phi


def transition_frequency(phi_ext, energies: DerivedTransmonEnergies):
    """Lowest-transition angular frequency (rad/ns) at flux ``phi_ext``.

    E_J = E_J_max |cos(pi phi_ext)| so that phi_ext = 0.5 is the half-flux point.
    """
    phi = np.asarray(phi_ext, dtype=float)
    if np.any(np.abs(phi) >= 0.5):
        raise HalfFluxError("|phi_ext| >= 0.5: E_J vanishes near half flux, dispersion invalid")
    e_j = energies.E_J_max * np.abs(np.cos(np.pi * phi))
    omega = (np.sqrt(8.0 * energies.E_C * e_j) - energies.E_C) / HBAR
    if np.any(omega <= 0):
        raise HalfFluxError("transition frequency is non-positive at this flux")
    return float(omega) if omega.ndim == 0 else omega


def eigenfrequencies(omega_ge, alpha: float, n_levels: int):
    """omega_m = m*omega_ge + alpha/2 (m^2 - m) for m = 0..n_levels-1.

    Broadcasts over an array of ``omega_ge``: the level index is the last axis.
    """
    if not 2 <= n_levels <= 6:
        raise ConfigError(f"n_levels must be in [2, 6], got {n_levels}")
    m = np.arange(n_levels, dtype=float)
    omega_ge = np.asarray(omega_ge, dtype=float)
    return omega_ge[..., None] * m + 0.5 * alpha * (m * m - m)


def spectrum(t, params: DeviceParams, schedule: CycleSchedule, energies=None):
    """Eigenfrequencies at time(s) ``t``: returns (phi_ext, omega_ge, omega_m)."""
    energies = energies or derive_transmon_energies(params.omega_ge0, params.alpha)
    phi = external_flux(t, schedule)
    omega_ge = transition_frequency(phi, energies)
    return phi, omega_ge, eigenfrequencies(omega_ge, params.alpha, params.n_levels)


def spectrum_sample(t: float, params: DeviceParams, schedule: CycleSchedule) -> SpectrumSample:
    _, w, wm = spectrum(t, params, schedule)
    return SpectrumSample(t=float(t), omega_ge=float(w), omega_m=tuple(float(x) for x in wm))


def hamiltonian(t: float, params: DeviceParams, energies: DerivedTransmonEnergies,
                schedule: CycleSchedule) -> np.ndarray:
    """Hamiltonian (µeV) in the instantaneous eigenbasis: diag(hbar*omega_m(t))."""
    phi = external_flux(t, schedule)
    w = transition_frequency(phi, energies)
    return np.diag(HBAR * eigenfrequencies(w, params.alpha, params.n_levels)).astype(complex)


def write_spectrum_csv(path: str | Path, times, params: DeviceParams, schedule: CycleSchedule) -> None:
    times = np.asarray(times, dtype=float)
    phi, w, wm = spectrum(times, params, schedule)
    n = params.n_levels
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["t_ns", "phi_ext", "omega_ge_radns"] + [f"omega_m_radns_{m}" for m in range(n)])
        for i, t in enumerate(times):
            out.writerow([repr(float(t)), repr(float(phi[i])), repr(float(w[i]))]
                         + [repr(float(x)) for x in wm[i]])
