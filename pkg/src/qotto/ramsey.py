"""Modified Ramsey fringes: model, cosine fit and amplitude-sweep unwrapping.

A flux pulse of length tau shifts the fringe phase by delta_omega * tau,
which a single fringe only determines modulo 2 pi. Sweeping the pulse
amplitude from zero and following the phase continuously resolves the
branch; points where continuity is lost are refused rather than guessed.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import DeviceParams, derive_transmon_energies
from .errors import ConfigError, DataError, FitError
from .readout import rng_stream
from .transmon import transition_frequency

TWO_PI = 2.0 * math.pi


def fringe_model(phi, delta_omega: float, tau: float, T2: float = math.inf,
                 amplitude: float = 1.0, C: float = 0.0):
    """A cos(delta_omega tau + phi) exp(-tau / T2) + C."""
    if not T2 > 0:
        raise ConfigError("T2 must be > 0")
    damp = 0.0 if math.isinf(T2) else tau / T2
    return amplitude * np.cos(delta_omega * tau + np.asarray(phi, dtype=float)) * math.exp(-damp) + C


def wrap_phase(x):
    """Map to (-pi, pi]."""
    y = np.mod(np.asarray(x, dtype=float) + math.pi, TWO_PI) - math.pi
    y = np.where(y == -math.pi, math.pi, y)
    return float(y) if y.ndim == 0 else y


@dataclass(frozen=True)
class RamseyFringe:
    phases: np.ndarray  # rad
    amplitudes: np.ndarray
    tau: float  # ns
    noise_sigma: float = 0.0

    def __post_init__(self):
        ph = np.asarray(self.phases, dtype=float)
        amp = np.asarray(self.amplitudes, dtype=float)
        object.__setattr__(self, "phases", ph)
        object.__setattr__(self, "amplitudes", amp)
        if ph.ndim != 1 or ph.shape != amp.shape:
            raise DataError("phases and amplitudes must be 1-D arrays of equal length")
        if not (np.all(np.isfinite(ph)) and np.all(np.isfinite(amp))):
            raise DataError("fringe contains non-finite values")
        if not self.tau > 0:
            raise ConfigError("tau must be > 0")

    @property
    def coverage(self) -> float:
        """Phase range plus one typical step: 2 pi for a full period sampled without its endpoint."""
        s = np.sort(self.phases)
        if s.size < 2:
            return 0.0
        return float(s[-1] - s[0] + np.median(np.diff(s)))


@dataclass(frozen=True)
class FringeFit:
    phase: float  # delta_omega * tau on the chosen branch (rad)
    principal_phase: float  # wrapped to (-pi, pi]
    delta_omega: float  # rad/ns, phase / tau
    amplitude: float  # > 0
    C: float
    window: float  # 2 pi / tau, the aliasing period of delta_omega
    aliased: bool  # true value lies outside the principal window
    residual: float  # rms


def fit_fringe(fringe: RamseyFringe, phase_hint: float | None = None) -> FringeFit:
    """Linear least squares on a cos(phi) + b sin(phi) + C.

    The phase offset theta = atan2(-b, a) is returned on the 2 pi branch
    closest to ``phase_hint`` (the principal branch when no hint is given).
    """
    ph, y = fringe.phases, fringe.amplitudes
    if ph.size < 8:
        raise DataError("need at least 8 phase points")
    if fringe.coverage < TWO_PI * (1 - 1e-9):
        raise DataError("phases must span a full 2 pi period")
    X = np.stack([np.cos(ph), np.sin(ph), np.ones_like(ph)], axis=1)
    (a, b, c), *_ = np.linalg.lstsq(X, y, rcond=None)
    amp = math.hypot(a, b)
    scale = max(np.abs(y - y.mean()).max(), abs(c), 1e-300)
    noise = fringe.noise_sigma
    if amp <= 1e-9 * scale or (noise > 0 and amp < 2.0 * noise / math.sqrt(ph.size)):
        raise FitError("flat fringe: phase offset undefined")
    theta = math.atan2(-b, a)
    principal = float(wrap_phase(theta))
    phase = principal
    if phase_hint is not None:
        phase = principal + TWO_PI * round((phase_hint - principal) / TWO_PI)
    resid = float(np.sqrt(np.mean((X @ np.array([a, b, c]) - y) ** 2)))
    return FringeFit(phase=phase, principal_phase=principal, delta_omega=phase / fringe.tau,
                     amplitude=amp, C=float(c), window=TWO_PI / fringe.tau,
                     aliased=abs(phase) > math.pi, residual=resid)


# --- amplitude sweep ---------------------------------------------------------------

@dataclass
class SweepResult:
    flux_amplitude: np.ndarray
    phase: np.ndarray  # unwrapped, NaN where refused
    detuning: np.ndarray  # rad/ns
    aliased: np.ndarray  # bool
    refused: np.ndarray  # bool
    tau: float

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["flux_amplitude", "detuning_radns", "aliased_flag"])
            for a, d, al, rf in zip(self.flux_amplitude, self.detuning, self.aliased, self.refused):
                out.writerow([repr(float(a)), "nan" if rf else repr(float(d)), int(al or rf)])


def unwrap_sweep(flux_amplitudes, principal_phases, tau: float, max_jump: float = math.pi / 2) -> SweepResult:
    """Continuity unwrapping of fringe phases along an amplitude sweep.

    The sweep must start at zero amplitude, where the phase is zero. Each
    next phase is put on the branch nearest a linear extrapolation of the
    previous two. If the nearest branch is still more than ``max_jump`` away,
    continuity is lost: that point and all later ones are refused.
    """
    a = np.asarray(flux_amplitudes, dtype=float)
    th = np.asarray(principal_phases, dtype=float)
    if a.shape != th.shape or a.size == 0:
        raise DataError("amplitudes and phases must be equal-length, non-empty")
    if np.any(np.diff(np.abs(a)) <= 0):
        raise DataError("sweep amplitudes must increase in magnitude")
    if abs(a[0]) > 0:
        raise DataError("sweep must start at zero flux amplitude")
    out = np.full(a.size, np.nan)
    refused = np.zeros(a.size, dtype=bool)
    out[0] = th[0]
    if abs(th[0]) > max_jump:
        refused[:] = True
    for i in range(1, a.size):
        if refused[i - 1]:
            refused[i:] = True
            break
        if i >= 2:
            slope = (out[i - 1] - out[i - 2]) / (a[i - 1] - a[i - 2])
            pred = out[i - 1] + slope * (a[i] - a[i - 1])
        else:
            pred = out[i - 1]
        cand = th[i] + TWO_PI * round((pred - th[i]) / TWO_PI)
        if abs(cand - pred) > max_jump:
            refused[i:] = True
            break
        out[i] = cand
    out[refused] = np.nan
    aliased = np.zeros(a.size, dtype=bool)
    aliased[~refused] = np.abs(out[~refused]) > math.pi
    return SweepResult(a, out, out / tau, aliased, refused, tau)


def synthetic_fringe(delta_omega: float, tau: float, n_phases: int = 64, T2: float = math.inf,
                     amplitude: float = 1.0, C: float = 0.0, noise_sigma: float = 0.0,
                     seed: int = 0, stream: int = 0) -> RamseyFringe:
    ph = np.linspace(0.0, TWO_PI, n_phases, endpoint=False)
    y = fringe_model(ph, delta_omega, tau, T2, amplitude, C)
    if noise_sigma > 0:
        y = y + rng_stream(seed, 3, stream).normal(0.0, noise_sigma, size=n_phases)
    return RamseyFringe(ph, y, tau, noise_sigma)


def flux_detuning(flux_amplitude, params: DeviceParams, phi_dc: float = 0.0):
    """omega_ge(phi_dc + A) - omega_ge(phi_dc) in rad/ns."""
    e = derive_transmon_energies(params.omega_ge0, params.alpha)
    a = np.asarray(flux_amplitude, dtype=float)
    return transition_frequency(phi_dc + a, e) - transition_frequency(phi_dc, e)


def simulate_sweep(flux_amplitudes, params: DeviceParams, tau: float = 50.0, phi_dc: float = 0.0,
                   n_phases: int = 64, T2: float = math.inf, amplitude: float = 1.0, C: float = 0.0,
                   noise_sigma: float = 0.0, seed: int = 0, max_jump: float = math.pi / 2) -> SweepResult:
    """Synthetic fringes along a flux-amplitude sweep, fitted and unwrapped."""
    amps = np.asarray(flux_amplitudes, dtype=float)
    det = flux_detuning(amps, params, phi_dc)
    principal = [fit_fringe(synthetic_fringe(d, tau, n_phases, T2, amplitude, C, noise_sigma, seed, i)).principal_phase
                 for i, d in enumerate(np.atleast_1d(det))]
    return unwrap_sweep(amps, principal, tau, max_jump)


def read_fringe_csv(path: str | Path, tau: float) -> RamseyFringe:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise DataError(f"cannot read fringe {path}: {exc}") from exc
    if not rows:
        raise DataError(f"{path} contains no rows")
    try:
        ph = [float(r["phase_rad"]) for r in rows]
        amp = [float(r["amplitude"]) for r in rows]
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: expected numeric columns phase_rad, amplitude ({exc})") from exc
    return RamseyFringe(np.array(ph), np.array(amp), tau)


def write_fringe_csv(path: str | Path, fringe: RamseyFringe) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["phase_rad", "amplitude"])
        for p, a in zip(fringe.phases, fringe.amplitudes):
            out.writerow([repr(float(p)), repr(float(a))])
