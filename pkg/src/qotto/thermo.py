"""Work, heat, power, efficiency and effective temperature from a trajectory.

Path integrals use a paired trapezoidal rule: between neighbouring samples
W takes the mean populations times the frequency increment and Q takes the
mean frequencies times the population increment, so W + Q equals the change
of internal energy exactly at the discrete level.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import OptimizeWarning, curve_fit

from .config import CycleSchedule
from .constants import HBAR, KB
from .errors import ConfigError, DataError, FitError
from .lindblad import Trajectory

POP_FLOOR = 1e-6


def internal_energy(populations, omegas, tol: float = 1e-6):
    """E = sum_m hbar omega_m p_m in µeV. Broadcasts over leading axes."""
    p = np.asarray(populations, dtype=float)
    w = np.asarray(omegas, dtype=float)
    if np.any(np.abs(p.sum(axis=-1) - 1.0) > tol):
        raise DataError("populations do not sum to 1")
    e = HBAR * np.sum(w * p, axis=-1)
    return float(e) if e.ndim == 0 else e


def _window_indices(traj: Trajectory, window) -> tuple[int, int]:
    t0, t1 = window
    if t1 <= t0:
        raise DataError(f"empty integration window [{t0}, {t1}]")
    try:
        return traj.index_of(t0), traj.index_of(t1)
    except Exception as exc:
        raise DataError(f"window [{t0}, {t1}] ns is not on the trajectory sample grid") from exc


def path_integrals(populations, omegas) -> tuple[float, float]:
    """Paired trapezoidal W and Q (µeV) along sampled populations and frequencies."""
    p = np.asarray(populations, dtype=float)
    w = np.asarray(omegas, dtype=float)
    if p.shape[0] < 2:
        raise DataError("need at least two samples to integrate")
    p_mid = 0.5 * (p[1:] + p[:-1])
    w_mid = 0.5 * (w[1:] + w[:-1])
    work = HBAR * np.sum(p_mid * np.diff(w, axis=0))
    heat = HBAR * np.sum(w_mid * np.diff(p, axis=0))
    return float(work), float(heat)


def integrate_stroke(traj: Trajectory, window) -> tuple[float, float]:
    """(W, Q) in µeV accumulated over ``window = (t_start, t_end)`` in ns."""
    i0, i1 = _window_indices(traj, window)
    sl = slice(i0, i1 + 1)
    return path_integrals(traj.populations[sl], traj.omega_m[sl])


def ideal_cycle_analysis(p_A, p_C, omega_A: float, omega_B: float, alpha: float) -> tuple[float, float]:
    """Closed-form (W_tot, Q_abs) in µeV for an ideal Otto cycle.

    ``p_A`` and ``p_C`` are the populations at the start of the expansion and
    at the end of the cold isochore; ``omega_A``/``omega_B`` are the qubit
    frequencies before and after the expansion.
    """
    p_A = np.asarray(p_A, dtype=float)
    p_C = np.asarray(p_C, dtype=float)
    if p_A.shape != p_C.shape:
        raise DataError("population vectors differ in length")
    for p in (p_A, p_C):
        if abs(p.sum() - 1.0) > 1e-6:
            raise DataError("populations do not sum to 1")
    m = np.arange(p_A.size, dtype=float)
    dp = p_A - p_C
    first = float(np.sum(m * dp))
    second = float(np.sum((m * m - m) * dp))
    w_tot = -HBAR * omega_A * (1.0 - omega_B / omega_A) * first
    q_abs = HBAR * omega_A * first + 0.5 * HBAR * alpha * second
    return w_tot, q_abs


def power_efficiency(W_tot: float, Q_abs: float, tau_cyc: float) -> tuple[float, float | None]:
    """P = -W_tot / tau_cyc in eV/s and eta = -W_tot / Q_abs (None when Q_abs <= 0)."""
    if not tau_cyc > 0:
        raise ConfigError("tau_cyc must be > 0")
    power = -W_tot / tau_cyc * 1e3  # µeV/ns -> eV/s
    eta = -W_tot / Q_abs if Q_abs > 0 else None
    return power + 0.0, (eta + 0.0 if eta is not None else None)


def otto_efficiency(omega_min: float, omega_max: float) -> float:
    if not 0 < omega_min <= omega_max:
        raise ConfigError("need 0 < omega_min <= omega_max")
    return 1.0 - omega_min / omega_max


def carnot_efficiency(T_cold: float, T_hot: float) -> float:
    if not 0 < T_cold <= T_hot:
        raise ConfigError("need 0 < T_cold <= T_hot")
    return 1.0 - T_cold / T_hot


# --- effective temperature -------------------------------------------------------

@dataclass(frozen=True)
class TemperatureFit:
    T: float | None  # mK, None when undefined
    residual: float
    defined: bool
    reason: str = ""


def effective_temperature(populations, omegas, floor: float = POP_FLOOR,
                          max_residual: float | None = None) -> TemperatureFit:
    """Temperature of the nearest Boltzmann distribution.

    Weighted least squares of ln p_m = c - hbar omega_m / (k_B T) with weights
    p_m; levels with p_m <= ``floor`` are ignored. Inverted or single-level
    distributions, and fits with residual above ``max_residual``, are flagged.
    """
    p = np.asarray(populations, dtype=float)
    e = HBAR * np.asarray(omegas, dtype=float)
    e = e - e[0]
    keep = p > floor
    if keep.sum() < 2:
        return TemperatureFit(None, math.nan, False, "fewer than two populated levels")
    x, y, wt = e[keep], np.log(p[keep]), p[keep]
    sw = np.sqrt(wt)
    A = np.stack([np.ones_like(x), x], axis=1) * sw[:, None]
    coef, *_ = np.linalg.lstsq(A, y * sw, rcond=None)
    slope = coef[1]
    res = y - (coef[0] + slope * x)
    rms = float(np.sqrt(np.sum(wt * res ** 2) / np.sum(wt)))
    if not slope < 0:
        return TemperatureFit(None, rms, False, "inverted populations")
    T = -1.0 / (KB * slope)
    if max_residual is not None and rms > max_residual:
        return TemperatureFit(float(T), rms, False, "populations not thermal within tolerance")
    return TemperatureFit(float(T), rms, True)


@dataclass
class EffectiveTemperatureSeries:
    times: np.ndarray
    T_eff: np.ndarray  # NaN where undefined
    fit_residual: np.ndarray
    defined: np.ndarray


def temperature_series(traj: Trajectory, **kwargs) -> EffectiveTemperatureSeries:
    fits = [effective_temperature(p, w, **kwargs) for p, w in zip(traj.populations, traj.omega_m)]
    return EffectiveTemperatureSeries(
        times=traj.times.copy(),
        T_eff=np.array([f.T if f.defined else np.nan for f in fits]),
        fit_residual=np.array([f.residual for f in fits]),
        defined=np.array([f.defined for f in fits]),
    )


@dataclass(frozen=True)
class SaturationFit:
    tau_sat: float  # µs
    T_max: float  # mK, asymptote
    amplitude: float  # mK
    window: tuple[float, float]  # ns
    residual: float  # mK rms
    tau_std: float  # µs


def _sat_model(t, T_inf, A, tau):
    return T_inf - A * np.exp(-t / tau)


def saturation_fit(times, T_eff, min_points: int = 4) -> SaturationFit:
    """Fit T(t) = T_inf - A exp(-t / tau_sat) to per-cycle extrema (times in ns)."""
    t = np.asarray(times, dtype=float)
    T = np.asarray(T_eff, dtype=float)
    ok = np.isfinite(T)
    t, T = t[ok], T[ok]
    if t.size < min_points:
        raise FitError(f"need at least {min_points} extrema for a saturation fit, got {t.size}")
    t_rel = t - t[0]
    span = t_rel[-1]
    scale = max(np.ptp(T), 1e-300)
    if np.ptp(T) < 1e-9 * max(abs(T).max(), 1.0):
        raise FitError("temperature series is flat: saturation time unidentifiable")
    p0 = (T[-1] + 0.1 * (T[-1] - T[0]), T[-1] - T[0], span / 3.0)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", OptimizeWarning)
            popt, pcov = curve_fit(_sat_model, t_rel, T, p0=p0, maxfev=10_000)
    except (RuntimeError, OptimizeWarning, ValueError) as exc:
        raise FitError(f"saturation fit did not converge: {exc}") from exc
    T_inf, A, tau = popt
    tau_std = float(np.sqrt(pcov[2, 2])) if np.all(np.isfinite(pcov)) else math.inf
    if not (tau > 0 and np.isfinite(tau_std) and tau < 1e3 * max(span, 1.0)):
        raise FitError(f"saturation fit did not converge (tau = {tau:.3g} ns)")
    if abs(A) < 1e-6 * scale:
        raise FitError("saturation amplitude vanishes: tau unidentifiable")
    resid = float(np.sqrt(np.mean((_sat_model(t_rel, *popt) - T) ** 2)))
    return SaturationFit(tau_sat=tau / 1e3, T_max=float(T_inf), amplitude=float(A),
                         window=(float(t[0]), float(t[-1])), residual=resid, tau_std=tau_std / 1e3)


# --- per-cycle report ------------------------------------------------------------

@dataclass
class CycleRecord:
    cycle: int
    t_start: float
    W_o: float  # expansion AB
    W_i: float  # compression CD
    Q_c: float  # cold isochore BC
    Q_h: float  # hot isochore DA
    Q_ramps: float  # residual heat leaking on the flux ramps
    W_tot: float
    Q_abs: float
    P: float  # eV/s
    eta: float | None
    eta_otto: float
    delta_E: float
    closure_residual: float
    T_eff_max: float | None = None
    T_eff_min: float | None = None
    t_T_max: float | None = None
    t_T_min: float | None = None


@dataclass
class ThermoReport:
    cycles: list[CycleRecord]
    tau_cyc: float
    meta: dict = field(default_factory=dict)

    @property
    def first(self) -> CycleRecord:
        return self.cycles[0]

    def summary(self, cycle: int = 0) -> dict:
        c = self.cycles[cycle]
        return {"cycle": c.cycle, "Q_abs_ueV": c.Q_abs, "W_tot_ueV": c.W_tot,
                "P_eV_per_s": c.P, "eta": c.eta, "eta_otto": c.eta_otto}

    def to_dict(self) -> dict:
        return {"tau_cyc_ns": self.tau_cyc, "summary": self.summary(),
                "cycles": [asdict(c) for c in self.cycles], "meta": self.meta}

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, allow_nan=False))


def cycle_report(traj: Trajectory, schedule: CycleSchedule, temperatures: bool = True) -> ThermoReport:
    """Stroke-resolved work and heat for every complete cycle of ``traj``."""
    tseries = temperature_series(traj) if temperatures else None
    records = []
    for c in range(schedule.n_cycles):
        t_a, t_b, t_c, t_d, t_e = schedule.stroke_times(c)
        W_ab, Q_ab = integrate_stroke(traj, (t_a, t_b))
        W_bc, Q_bc = integrate_stroke(traj, (t_b, t_c))
        W_cd, Q_cd = integrate_stroke(traj, (t_c, t_d))
        W_da, Q_da = integrate_stroke(traj, (t_d, t_e))
        i_a, i_e = traj.index_of(t_a), traj.index_of(t_e)
        dE = float(traj.mean_energy[i_e] - traj.mean_energy[i_a])
        W_all = W_ab + W_bc + W_cd + W_da
        Q_all = Q_ab + Q_bc + Q_cd + Q_da
        W_tot = W_ab + W_cd
        P, eta = power_efficiency(W_tot, Q_da, schedule.tau_cyc)
        w_a = traj.omega_ge[i_a]
        w_b = traj.omega_ge[traj.index_of(t_b)]
        lo, hi = sorted((w_a, w_b))
        rec = CycleRecord(cycle=c + 1, t_start=t_a, W_o=W_ab, W_i=W_cd, Q_c=Q_bc, Q_h=Q_da,
                          Q_ramps=Q_ab + Q_cd, W_tot=W_tot, Q_abs=Q_da, P=P, eta=eta,
                          eta_otto=otto_efficiency(lo, hi), delta_E=dE,
                          closure_residual=dE - W_all - Q_all)
        if tseries is not None:
            sl = slice(i_a, i_e + 1)
            T = tseries.T_eff[sl]
            if np.any(np.isfinite(T)):
                j_max, j_min = int(np.nanargmax(T)), int(np.nanargmin(T))
                rec.T_eff_max, rec.T_eff_min = float(T[j_max]), float(T[j_min])
                rec.t_T_max = float(tseries.times[i_a + j_max])
                rec.t_T_min = float(tseries.times[i_a + j_min])
        records.append(rec)
    return ThermoReport(cycles=records, tau_cyc=schedule.tau_cyc)


def saturation_from_report(report: ThermoReport, which: str = "max") -> SaturationFit:
    if which not in ("max", "min"):
        raise ConfigError("which must be 'max' or 'min'")
    t = [getattr(c, f"t_T_{which}") for c in report.cycles]
    T = [getattr(c, f"T_eff_{which}") for c in report.cycles]
    if any(v is None for v in T):
        raise FitError("effective temperature undefined in some cycle")
    return saturation_fit(t, T)
