"""NIS junction and quantum-circuit refrigerator (QCR) transition rates.

Energies are in µeV, voltages in units of Delta/e unless a name says
otherwise (``*_uV``), currents either normalized to Delta/(e R_T) or in nA.
"""
from __future__ import annotations

import cmath
import csv
import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import integrate, optimize
from scipy.special import expit

from .config import CycleSchedule, DeviceParams
from .constants import H_PLANCK, HBAR, KB
from .errors import DataError, ExtractionError, QuadratureError, ResonanceError


# --- density of states and Fermi factors -------------------------------------

def normalized_dos(eps, Delta: float, gamma_D: float):
    """Dynes-broadened BCS density of states |Re{z / sqrt(z^2 - Delta^2)}|, z = eps + i gamma_D Delta."""
    z = np.asarray(eps, dtype=float) + 1j * gamma_D * Delta
    return np.abs((z / np.sqrt(z * z - Delta * Delta)).real)


def fermi(e, kT: float):
    return expit(-np.asarray(e, dtype=float) / kT)


def _dos1(e: float, Delta: float, gamma_D: float) -> float:
    z = complex(e, gamma_D * Delta)
    return abs((z / cmath.sqrt(z * z - Delta * Delta)).real)


def _fermi1(x: float) -> float:
    """Fermi function of a reduced energy x = e / kT."""
    if x > 0:
        q = math.exp(-x)
        return q / (1.0 + q)
    return 1.0 / (1.0 + math.exp(x))


def dynes_antiderivative(eps, Delta: float, gamma_D: float):
    """Re sqrt(z^2 - Delta^2): primitive of the density of states for eps >= 0, zero at eps = 0."""
    z = np.asarray(eps, dtype=float) + 1j * gamma_D * Delta
    return np.sqrt(z * z - Delta * Delta).real


# --- IV characteristic -----------------------------------------------------

def _iv_scalar(v: float, T_N: float, Delta: float, gamma_D: float, epsabs: float) -> float:
    kT = KB * T_N
    ev = v * Delta

    def integrand(e):
        return _dos1(e, Delta, gamma_D) * (_fermi1((e - ev) / kT) - _fermi1((e + ev) / kT))

    span = max(abs(ev), Delta) + 60.0 * kT + 20.0 * gamma_D * Delta
    pts = sorted({-Delta, Delta, ev, -ev, 0.0})
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, _ = integrate.quad(integrand, -span, span, points=pts, epsabs=epsabs * Delta,
                                    epsrel=1e-12, limit=1000)
        except integrate.IntegrationWarning as exc:
            raise QuadratureError(f"IV quadrature did not converge at V={v} Delta/e: {exc}") from exc
    return val / (2.0 * Delta)


def iv_current(V, T_N: float, Delta: float, gamma_D: float, epsabs: float = 1e-11):
    """NIS current in units of Delta/(e R_T) at bias ``V`` (units of Delta/e).

    I = 1/(2 e R_T) * integral n_S(eps) [f(eps - eV) - f(eps + eV)] d eps,
    evaluated with adaptive Gauss-Kronrod quadrature (``quad_vec`` over all
    biases at once for array input).
    """
    V = np.asarray(V, dtype=float)
    if not np.all(np.isfinite(V)):
        raise DataError("bias voltage must be finite")
    if not T_N > 0:
        raise DataError("T_N must be > 0")
    if V.ndim == 0:
        return _iv_scalar(float(V), T_N, Delta, gamma_D, epsabs)
    # the current is odd in V: integrate once per distinct |V|
    v, back = np.unique(np.abs(V.ravel()), return_inverse=True)
    kT = KB * T_N
    ev = v * Delta
    span = max(np.max(np.abs(ev)), Delta) + 60.0 * kT + 20.0 * gamma_D * Delta
    bounds = [-span, -Delta, 0.0, Delta, span]

    def integrand(eps):
        return normalized_dos(eps, Delta, gamma_D) * (fermi(eps - ev, kT) - fermi(eps + ev, kT))

    total = np.zeros_like(v)
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        for a, b in zip(bounds[:-1], bounds[1:]):
            try:
                res, _ = integrate.quad_vec(integrand, a, b, epsabs=epsabs * Delta, epsrel=1e-12,
                                            limit=4000, norm="max")
            except integrate.IntegrationWarning as exc:
                raise QuadratureError(f"IV quadrature on [{a:.4g}, {b:.4g}] µeV: {exc}") from exc
            total += res
    return (np.sign(V.ravel()) * total[back] / (2.0 * Delta)).reshape(V.shape)


def iv_current_nA(V_uV, T_N: float, Delta: float, R_T: float, gamma_D: float):
    """Current in nA for a bias in µV (Delta in µeV, R_T in kOhm)."""
    V_uV = np.asarray(V_uV, dtype=float)
    return iv_current(V_uV / Delta, T_N, Delta, gamma_D) * Delta / R_T


@dataclass
class IvCurve:
    V_uV: np.ndarray
    I_nA: np.ndarray
    T_N: float

    def __post_init__(self):
        self.V_uV = np.asarray(self.V_uV, dtype=float)
        self.I_nA = np.asarray(self.I_nA, dtype=float)
        if self.V_uV.shape != self.I_nA.shape or self.V_uV.ndim != 1:
            raise DataError("IV curve needs matching one-dimensional V and I arrays")
        if self.V_uV.size == 0:
            raise DataError("IV curve is empty")
        if np.any(np.diff(self.V_uV) <= 0):
            raise DataError("IV voltages must be strictly increasing")

    @classmethod
    def synthetic(cls, Delta: float, R_T: float, gamma_D: float, T_N: float,
                  v_max: float = 3.0, n: int = 241) -> "IvCurve":
        """Model curve on a symmetric grid |eV| <= v_max * Delta."""
        V = np.linspace(-v_max, v_max, n) * Delta
        return cls(V, iv_current_nA(V, T_N, Delta, R_T, gamma_D), T_N)


@dataclass
class JunctionExtraction:
    Delta_hat: float
    R_T_hat: float
    gamma_D_hat: float
    diagnostics: dict = field(default_factory=dict)


def _zero_bias_conductance(Delta: float, gamma_D: float, kT: float) -> float:
    """Normalized zero-bias conductance R_T dI/dV at V = 0 for the Dynes model."""
    span = 60.0 * kT

    def f(e):
        c = math.cosh(0.5 * e / kT)
        return _dos1(e, Delta, gamma_D) * 0.25 / (kT * c * c)

    val, _ = integrate.quad(f, -span, span, points=[0.0], epsabs=1e-14, epsrel=1e-11, limit=500)
    return val


def _threshold_crossing(v, ratio, theta):
    """Bias where ``ratio`` first reaches ``theta`` walking outward from zero bias."""
    idx = np.nonzero(ratio >= theta)[0]
    if idx.size == 0 or idx[0] == 0:
        return None
    k = idx[0]
    r0, r1 = ratio[k - 1], ratio[k]
    return v[k - 1] + (theta - r0) * (v[k] - v[k - 1]) / (r1 - r0)


def extract_junction_params(curve: IvCurve, theta: float = 0.5, max_iter: int = 8,
                            rtol: float = 1e-5) -> JunctionExtraction:
    """Recover (Delta, R_T, gamma_D) from an IV curve measured at ``curve.T_N``.

    Each pass refines the three estimates in turn:

    * Delta from the half-distance between the two biases where |I| reaches
      ``theta`` of the Ohmic line V/R_T. The crossing bias sits above the gap
      edge, so it is mapped back to Delta by solving model(V_cross) = theta
      V_cross/R_T with the current gamma_D and the known T_N.
    * R_T from the least-squares slope of I against the zero-temperature
      Dynes shape Re sqrt((eV + i gamma Delta)^2 - Delta^2) on |eV| >= 2 Delta
      (the plain secant slope there is still ~9% too steep).
    * gamma_D from R_T / R_subgap, with R_subgap the zero-bias slope of an
      odd cubic fitted on |eV| <= 0.3 Delta, inverted through the thermally
      averaged zero-bias conductance.
    """
    V, I = curve.V_uV, curve.I_nA
    if V.size < 200:
        raise ExtractionError(f"need at least 200 IV points, got {V.size}")
    if not np.any(np.abs(I) > 0):
        raise ExtractionError("IV curve is identically zero")
    T_N = curve.T_N
    kT = KB * T_N

    pos, neg = V > 0, V < 0
    if pos.sum() < 20 or neg.sum() < 20:
        raise ExtractionError("IV curve must cover both bias polarities")
    vmax = min(V[pos].max(), -V[neg].min())

    # chord through the outermost points: ratio I R / V is 1 at the ends
    ends = np.abs(V) >= vmax * (1 - 1e-12)
    R = float(np.mean(np.abs(V[ends]) / np.abs(I[ends])))
    if not (np.isfinite(R) and R > 0):
        raise ExtractionError("IV curve has no positive Ohmic slope")
    # first gamma guess from n_S(0) = gamma / sqrt(1 + gamma^2), slope over the inner tenth
    ratio = _zero_bias_slope(V, I, 0.1 * vmax) * R
    if not 0 < ratio < 1:
        raise ExtractionError(f"subgap/tunneling conductance ratio {ratio:.3g} outside (0, 1)")
    gamma = ratio / math.sqrt(1.0 - ratio * ratio)
    Delta = None
    history = []
    for _ in range(max_iter):
        crossings = []
        for mask, sgn in ((pos, 1.0), (neg, -1.0)):
            v = sgn * V[mask]
            i = sgn * I[mask]
            order = np.argsort(v)
            vc = _threshold_crossing(v[order], (i * R / v)[order], theta)
            if vc is None:
                raise ExtractionError("current never crosses the subgap threshold: curve too narrow")
            crossings.append(vc)
        v_cross = 0.5 * (crossings[0] + crossings[1])

        def crossing_eq(d, g=gamma):
            return _iv_scalar(v_cross / d, T_N, d, g, 1e-10) * d - theta * v_cross

        lo, hi = 0.2 * v_cross, 5.0 * v_cross
        if Delta is None:
            def cold_eq(d, g=gamma):
                return dynes_antiderivative(v_cross, d, g) - theta * v_cross
            Delta = optimize.brentq(cold_eq, lo, v_cross) if cold_eq(lo) * cold_eq(v_cross) < 0 else v_cross
        Delta = _crossing_root(crossing_eq, Delta, lo, hi, 1e-8 * v_cross)
        if vmax < 2.5 * Delta:
            raise ExtractionError(f"curve spans only |eV| <= {vmax / Delta:.2f} Delta; need ~3 Delta")

        ohmic = np.abs(V) >= 2.0 * Delta
        # zero-temperature shape: thermal corrections here are O((kT)^2 / Delta^2) ~ 1e-3 of I
        shape = np.sign(V[ohmic]) * dynes_antiderivative(np.abs(V[ohmic]), Delta, gamma)
        R = float(np.dot(shape, shape) / np.dot(shape, I[ohmic]))

        g0 = _zero_bias_slope(V, I, 0.3 * Delta)
        ratio = float(g0 * R)  # R_T / R_subgap
        if not 0 < ratio < 1:
            raise ExtractionError(f"subgap/tunneling conductance ratio {ratio:.3g} outside (0, 1)")
        gamma = _invert_zero_bias(ratio, Delta, kT)
        history.append([float(Delta), R, float(gamma)])
        if len(history) > 1 and np.allclose(history[-1], history[-2], rtol=rtol, atol=0):
            break

    model = iv_current(V / Delta, T_N, Delta, gamma) * Delta / R
    return JunctionExtraction(
        Delta_hat=float(Delta), R_T_hat=R, gamma_D_hat=float(gamma),
        diagnostics={
            "theta": theta,
            "v_cross_uV": float(v_cross),
            "subgap_ratio": ratio,
            "rms_residual_nA": float(np.sqrt(np.mean((I - model) ** 2))),
            "iterations": history,
        },
    )


def _zero_bias_slope(V, I, half_width):
    small = np.abs(V) <= half_width
    if small.sum() < 3:
        raise ExtractionError("too few points near zero bias to measure the subgap slope")
    x = V[small]
    return np.linalg.lstsq(np.column_stack([x, x ** 3]), I[small], rcond=None)[0][0]


def _crossing_root(f, guess, lo, hi, xtol):
    """Root of the decreasing ``f`` on [lo, hi]: secant from ``guess``, bisection fallback."""
    try:
        root = optimize.newton(f, guess, x1=guess * (1 + 1e-3), tol=xtol, maxiter=30)
        if lo <= root <= hi:
            return float(root)
    except (RuntimeError, OverflowError):
        pass
    if f(lo) * f(hi) > 0:
        raise ExtractionError("threshold crossing is inconsistent with a superconducting gap")
    return optimize.brentq(f, lo, hi, xtol=xtol)


def _invert_zero_bias(ratio: float, Delta: float, kT: float) -> float:
    """gamma_D whose thermally averaged zero-bias conductance equals ``ratio``."""
    # start from n_S(0) = gamma / sqrt(1 + gamma^2); the conductance is nearly linear in gamma
    g = ratio / math.sqrt(1.0 - ratio * ratio)
    for _ in range(50):
        model = _zero_bias_conductance(Delta, g, kT)
        g_new = min(g * ratio / model, 0.999)
        if abs(g_new - g) <= 1e-12 * g:
            return g_new
        g = g_new
    return g


def write_iv_csv(path: str | Path, curve: IvCurve, delta_ref: float) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["V_delta_over_e", "I_nA"])
        for v, i in zip(curve.V_uV, curve.I_nA):
            out.writerow([repr(float(v / delta_ref)), repr(float(i))])


def read_iv_csv(path: str | Path, T_N: float, delta_ref: float | None = None) -> IvCurve:
    """Read an IV CSV with columns (V_delta_over_e, I_nA) or (V_uV, I_nA).

    Voltages given in Delta/e units are converted with the reference gap
    ``delta_ref`` (µeV) that defined the axis.
    """
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise DataError(f"{path}: no IV samples")
    cols = set(rows[0])
    try:
        I = np.array([float(r["I_nA"]) for r in rows])
        if "V_uV" in cols:
            V = np.array([float(r["V_uV"]) for r in rows])
        elif "V_delta_over_e" in cols:
            if delta_ref is None:
                raise DataError("V_delta_over_e column needs the reference gap delta_ref")
            V = np.array([float(r["V_delta_over_e"]) for r in rows]) * delta_ref
        else:
            raise DataError(f"{path}: expected a V_delta_over_e or V_uV column")
    except (KeyError, ValueError) as exc:
        raise DataError(f"{path}: malformed IV row ({exc})") from exc
    return IvCurve(V, I, T_N)


# --- forward tunneling rate ---------------------------------------------------

@dataclass(frozen=True)
class TunnelingRateFn:
    """Normalized forward quasiparticle tunneling rate F(E) in 1/ns.

    F(E) = (1/h) integral n_S(eps) f(eps - E) [1 - f(eps)] d eps with both
    Fermi factors at T_N. The integration window extends ``span_kT`` thermal
    energies beyond [min(0, E), max(0, E)].
    """

    Delta: float
    gamma_D: float
    T_N: float
    span_kT: float = 60.0
    epsrel: float = 1e-10

    def __call__(self, E):
        E = np.asarray(E, dtype=float)
        if E.ndim == 0:
            return _forward_rate(float(E), self.Delta, self.gamma_D, self.T_N, self.span_kT, self.epsrel)
        flat = [_forward_rate(float(e), self.Delta, self.gamma_D, self.T_N, self.span_kT, self.epsrel)
                for e in E.ravel()]
        return np.array(flat).reshape(E.shape)


@lru_cache(maxsize=65536)
def _forward_rate(E, Delta, gamma_D, T_N, span_kT, epsrel):
    if not math.isfinite(E):
        raise QuadratureError("F(E) needs a finite energy")
    kT = KB * T_N
    lo = min(0.0, E) - span_kT * kT
    hi = max(0.0, E) + span_kT * kT
    cuts = sorted({lo, hi, *(p for p in (-Delta, 0.0, E, Delta) if lo < p < hi)})

    def integrand(eps):
        return _dos1(eps, Delta, gamma_D) * _fermi1((eps - E) / kT) * _fermi1(-eps / kT)

    # the integrand scale: exp(-|E|/kT) suppression below threshold
    floor = 1e-300
    total = 0.0
    abserr = 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        for a, b in zip(cuts[:-1], cuts[1:]):
            pts = [p for p in (-Delta - 2 * gamma_D * Delta, -Delta + 2 * gamma_D * Delta,
                               Delta - 2 * gamma_D * Delta, Delta + 2 * gamma_D * Delta) if a < p < b]
            try:
                val, err = integrate.quad(integrand, a, b, points=pts or None, epsabs=floor,
                                          epsrel=epsrel, limit=1000)
            except integrate.IntegrationWarning:
                # fall back to an absolute tolerance relative to the running total
                val, err = integrate.quad(integrand, a, b, points=pts or None,
                                          epsabs=max(abs(total), 1e-200) * epsrel, epsrel=epsrel,
                                          limit=2000)
            total += val
            abserr += err
    if not math.isfinite(total) or total < 0:
        raise QuadratureError(f"forward-rate quadrature failed at E={E} µeV")
    return total / H_PLANCK


def forward_tunneling_rate(E, fn: TunnelingRateFn):
    return fn(E)


def zero_temperature_forward_rate(E: float, Delta: float, gamma_D: float) -> float:
    """T -> 0 limit of F(E): (1/h) * integral_0^E n_S, closed form via the Dynes primitive."""
    if E <= 0:
        return 0.0
    return float(dynes_antiderivative(E, Delta, gamma_D)) / H_PLANCK


# --- QCR drive ----------------------------------------------------------------

@dataclass(frozen=True)
class QcrVoltageSchedule:
    A_h: float
    A_c: float
    square_period: float
    schedule: CycleSchedule

    @classmethod
    def from_schedule(cls, schedule: CycleSchedule) -> "QcrVoltageSchedule":
        return cls(schedule.A_h, schedule.A_c, schedule.square_period, schedule)


def stroke_amplitude(stroke: str, schedule: CycleSchedule) -> float:
    """|V_QCR| (Delta/e) held during a stroke."""
    if stroke == "BC":
        return schedule.A_c
    if stroke == "DA":
        return schedule.A_h
    if stroke == "prep":
        return {"idle": 0.0, "heating": schedule.A_h, "cooling": schedule.A_c}[schedule.prep_drive]
    return 0.0


def qcr_voltage(t, schedule: QcrVoltageSchedule | CycleSchedule):
    """Signed net-zero square drive: +A for the first half of each period, -A for the second.

    Zero on the flux ramps. The wave restarts at the beginning of every
    active stroke.
    """
    sched = schedule.schedule if isinstance(schedule, QcrVoltageSchedule) else schedule
    t = np.asarray(t, dtype=float)
    scalar = t.ndim == 0
    t = np.atleast_1d(t)
    if np.any(t < 0) or np.any(t > sched.t_end + 1e-9):
        raise DataError("time outside simulated window")
    out = np.zeros_like(t)
    u = t - sched.tau_p
    cyc = np.floor_divide(u, sched.tau_cyc)
    s = u - cyc * sched.tau_cyc
    last = t >= sched.t_end - 1e-12
    s = np.where(last, sched.tau_cyc, s)
    t_b = sched.tau_1
    t_c = t_b + sched.tau_2
    t_d = t_c + sched.tau_3
    half = 0.5 * sched.square_period

    def square(elapsed, amp):
        phase = np.floor_divide(elapsed, half).astype(int) % 2
        return np.where(phase == 0, amp, -amp)

    prep = u < 0
    if sched.prep_drive != "idle":
        out[prep] = square(t[prep], stroke_amplitude("prep", sched))
    cool = ~prep & (s >= t_b) & (s < t_c)
    out[cool] = square(s[cool] - t_b, sched.A_c)
    heat = ~prep & (s >= t_d)
    out[heat] = square(np.minimum(s[heat] - t_d, sched.tau_4 - 1e-9), sched.A_h)
    return float(out[0]) if scalar else out


# --- transition rates -----------------------------------------------------------

def coupling_prefactor(omega_mn, params: DeviceParams):
    """(pi Z_aux / R_T) g^2 / (omega_mn - omega_aux)^2 (dimensionless)."""
    omega_mn = np.asarray(omega_mn, dtype=float)
    detuning = omega_mn - params.omega_aux
    if np.any(np.abs(detuning) < 1e-6):
        raise ResonanceError("transition resonant with the auxiliary resonator: dispersive rate invalid")
    ratio = params.Z_aux / (params.R_T * 1e3)
    return math.pi * ratio * params.g_coupling ** 2 / detuning ** 2


def tunneling_fn(params: DeviceParams) -> TunnelingRateFn:
    return TunnelingRateFn(Delta=params.Delta, gamma_D=params.gamma_D, T_N=params.T_N)


def qcr_rates(m: int, n: int, omega_mn: float, V: float, params: DeviceParams,
              fn: TunnelingRateFn | None = None) -> tuple[float, float]:
    """QCR-induced (down m->n, up n->m) rates in 1/ns for adjacent levels m = n + 1."""
    if m != n + 1:
        raise ValueError("only adjacent transitions m = n + 1 are modelled")
    fn = fn or tunneling_fn(params)
    pref = float(coupling_prefactor(omega_mn, params)) * (n + 1)
    ev = V * params.Delta
    hw = HBAR * omega_mn
    down = fn(ev + hw) + fn(-ev + hw)
    up = fn(ev - hw) + fn(-ev - hw)
    return pref * down, pref * up


def bose(omega, T_N: float):
    return 1.0 / np.expm1(HBAR * np.asarray(omega, dtype=float) / (KB * T_N))


def intrinsic_rates(n: int, omega_mn, params: DeviceParams):
    """gamma_eg0 (n+1) (N+1) and gamma_eg0 (n+1) N with N the Bose occupation at T_N."""
    occ = bose(omega_mn, params.T_N)
    base = params.gamma_eg0 * (n + 1)
    return base * (occ + 1.0), base * occ


def total_rates(m: int, n: int, omega_mn: float, V: float, params: DeviceParams,
                fn: TunnelingRateFn | None = None) -> tuple[float, float]:
    d0, u0 = intrinsic_rates(n, omega_mn, params)
    dq, uq = qcr_rates(m, n, omega_mn, V, params, fn)
    return float(d0) + dq, float(u0) + uq


@dataclass
class RateTable:
    """Precomputed transition rates along a schedule.

    Plateau strokes (constant flux, constant |V|) get exact quadrature
    values. On the flux ramps (V = 0) the forward rates F(+-hbar omega_mn) are
    interpolated with a cubic through ``ramp_nodes`` exact values spanning
    the ramp's frequency range; the coupling prefactor is evaluated exactly.

    ``rates(t)`` returns ``(down, up)`` of shape (len(t), n_levels - 1):
    column n holds the n+1 -> n and n -> n+1 rates.
    """

    params: DeviceParams
    schedule: CycleSchedule
    ideal_ramps: bool = False
    ramp_nodes: int = 9
    fn: TunnelingRateFn | None = None

    def __post_init__(self):
        from .config import derive_transmon_energies
        from .transmon import eigenfrequencies, transition_frequency

        self.fn = self.fn or tunneling_fn(self.params)
        p = self.params
        self.energies = derive_transmon_energies(p.omega_ge0, p.alpha)
        self.n_pairs = p.n_levels - 1
        self._eig = eigenfrequencies
        self._tf = transition_frequency
        w_a = transition_frequency(self.schedule.phi_dc, self.energies)
        w_b = transition_frequency(self.schedule.phi_dc + self.schedule.phi_ac, self.energies)
        self.omega_a, self.omega_b = w_a, w_b
        self._plateau = {}
        for stroke, w in (("prep", w_a), ("BC", w_b), ("DA", w_a)):
            v = stroke_amplitude(stroke, self.schedule)
            self._plateau[stroke] = self._exact(w, v)
        # ramps: V = 0, frequency sweeps between w_b and w_a
        lo, hi = min(w_a, w_b), max(w_a, w_b)
        if hi - lo < 1e-12:
            nodes = np.array([lo])
        else:
            k = np.arange(self.ramp_nodes)
            nodes = lo + (hi - lo) * 0.5 * (1 - np.cos(np.pi * k / (self.ramp_nodes - 1)))
        self._ramp_nodes = nodes
        f_dn = np.empty((nodes.size, self.n_pairs))
        f_up = np.empty((nodes.size, self.n_pairs))
        for i, w in enumerate(nodes):
            w_mn = np.diff(eigenfrequencies(w, p.alpha, p.n_levels))
            for n in range(self.n_pairs):
                hw = HBAR * w_mn[n]
                f_dn[i, n] = 2.0 * self.fn(hw)
                f_up[i, n] = 2.0 * self.fn(-hw)
        self._ramp_fdn, self._ramp_fup = f_dn, f_up
        if nodes.size > 1:
            from scipy.interpolate import CubicSpline
            self._spl_dn = CubicSpline(nodes, f_dn, axis=0)
            self._spl_up = CubicSpline(nodes, f_up, axis=0)

    def _exact(self, omega_ge: float, V: float):
        w_mn = np.diff(self._eig(omega_ge, self.params.alpha, self.params.n_levels))
        down = np.empty(self.n_pairs)
        up = np.empty(self.n_pairs)
        for n in range(self.n_pairs):
            down[n], up[n] = total_rates(n + 1, n, w_mn[n], V, self.params, self.fn)
        return down, up

    def plateau_rates(self, stroke: str):
        return self._plateau[stroke]

    def _ramp_rates(self, omega_ge):
        p = self.params
        w_mn = np.diff(self._eig(omega_ge, p.alpha, p.n_levels), axis=-1)
        n_fac = np.arange(1, self.n_pairs + 1, dtype=float)
        pref = coupling_prefactor(w_mn, p) * n_fac
        if self._ramp_nodes.size > 1:
            fdn = self._spl_dn(omega_ge)
            fup = self._spl_up(omega_ge)
        else:
            fdn = np.broadcast_to(self._ramp_fdn[0], w_mn.shape)
            fup = np.broadcast_to(self._ramp_fup[0], w_mn.shape)
        d0, u0 = intrinsic_rates(n_fac - 1, w_mn, p)
        return d0 + pref * fdn, u0 + pref * fup

    def rates(self, t, labels: Sequence[str] | None = None):
        """Rates at times ``t``; ``labels`` are the stroke names (computed if omitted)."""
        from .transmon import stroke_label

        t = np.atleast_1d(np.asarray(t, dtype=float))
        if labels is None:
            labels = [stroke_label(x, self.schedule) for x in t]
        labels = np.asarray(labels)
        down = np.empty((t.size, self.n_pairs))
        up = np.empty((t.size, self.n_pairs))
        for stroke in ("prep", "BC", "DA"):
            sel = labels == stroke
            if np.any(sel):
                d, u = self._plateau[stroke]
                down[sel] = d
                up[sel] = u
        ramp = (labels == "AB") | (labels == "CD")
        if np.any(ramp):
            if self.ideal_ramps:
                down[ramp] = 0.0
                up[ramp] = 0.0
            else:
                from .transmon import external_flux
                w = self._tf(external_flux(t[ramp], self.schedule), self.energies)
                d, u = self._ramp_rates(np.asarray(w))
                down[ramp] = d
                up[ramp] = u
        return down, up

    def max_rate(self) -> float:
        vals = [np.max(d + u) for d, u in self._plateau.values()]
        if not self.ideal_ramps:
            d, u = self._ramp_rates(self._ramp_nodes)
            vals.append(np.max(d + u))
        return float(max(vals))

    def write_csv(self, path: str | Path) -> None:
        """Rates per stroke (ramps reported at their start)."""
        sched = self.schedule
        t_a, t_b, t_c, t_d, _ = sched.stroke_times(0)
        rows = [("prep", 0.0), ("AB", t_a), ("BC", t_b), ("CD", t_c), ("DA", t_d)]
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["stroke", "m", "n", "V_delta_over_e", "gamma_down_per_ns", "gamma_up_per_ns"])
            for stroke, t in rows:
                if stroke == "prep" and sched.tau_p <= 0:
                    continue
                d, u = self.rates([t], [stroke])
                v = stroke_amplitude(stroke, sched)
                for n in range(self.n_pairs):
                    out.writerow([stroke, n + 1, n, repr(v), repr(float(d[0, n])), repr(float(u[0, n]))])
