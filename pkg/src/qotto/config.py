"""Device, schedule and simulation parameters plus the JSON config loader."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from scipy import optimize

from .constants import HBAR, ghz, mhz
from .errors import ConfigError, UnreachableDetuningError

#: Detuning used by the engine runs (rad/ns).
OPERATING_DETUNING = -mhz(82.4)

# Bath parameters that are not measured directly. The field defaults are
# neutral placeholders; CALIBRATED_BATH holds the values fitted to the
# simulated first-cycle performance (see README).
DEFAULT_Z_AUX = 35.0
DEFAULT_G = mhz(40.0)
DEFAULT_T_N = 100.0
DEFAULT_GAMMA_EG0 = 1.0 / 10_000.0

CALIBRATED_BATH = {"Z_aux": 35.0, "g_coupling": mhz(80.0), "T_N": 250.0, "gamma_eg0": 1.0 / 10_000.0}
CALIBRATED_PREP_DRIVE = "heating"
PRESETS = ("placeholder", "calibrated")

PREP_DRIVES = ("idle", "heating", "cooling")
METHODS = ("populations", "density_matrix")


@dataclass(frozen=True)
class DeviceParams:
    """Static device parameters (units: rad/ns, kOhm, µeV, Ohm, mK, 1/ns)."""

    omega_ge0: float = ghz(4.047)
    alpha: float = -mhz(279.0)
    omega_aux: float = ghz(4.670)
    omega_r: float = ghz(7.436)
    R_T: float = 25.7
    Delta: float = 186.0
    gamma_D: float = 4.0e-3
    Z_aux: float = DEFAULT_Z_AUX
    g_coupling: float = DEFAULT_G
    T_N: float = DEFAULT_T_N
    gamma_eg0: float = DEFAULT_GAMMA_EG0
    n_levels: int = 6

    def __post_init__(self):
        positive = ("omega_ge0", "omega_aux", "omega_r", "R_T", "Delta", "Z_aux", "T_N")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"device.{name} must be > 0, got {getattr(self, name)!r}")
        if self.g_coupling < 0:
            raise ConfigError("device.g_coupling must be >= 0")
        if self.gamma_eg0 < 0:
            raise ConfigError("device.gamma_eg0 must be >= 0")
        if not 0 < self.gamma_D < 1:
            raise ConfigError(f"device.gamma_D must lie in (0, 1), got {self.gamma_D!r}")
        if not isinstance(self.n_levels, int) or isinstance(self.n_levels, bool):
            raise ConfigError("device.n_levels must be an integer")
        if not 2 <= self.n_levels <= 6:
            raise ConfigError(f"device.n_levels must be in [2, 6], got {self.n_levels}")
        if not self.alpha < 0:
            raise ConfigError(f"device.alpha must be negative (transmon regime), got {self.alpha!r}")
        top = self.omega_ge0 + self.alpha * (self.n_levels - 2)
        if not top > 0:
            raise ConfigError(
                "device: adjacent transition frequency omega_ge0 + alpha*(m-1) "
                f"becomes non-positive below level {self.n_levels - 1}"
            )


@dataclass(frozen=True)
class DerivedTransmonEnergies:
    E_C: float  # µeV
    E_J_max: float  # µeV


def derive_transmon_energies(omega_ge0: float, alpha: float) -> DerivedTransmonEnergies:
    """Charging and maximum Josephson energy from the sweet-spot spectrum.

    Uses E_C = -hbar*alpha and inverts hbar*omega_ge0 = sqrt(8 E_C E_J) - E_C.
    """
    if not alpha < 0:
        raise ConfigError(f"alpha must be negative for a transmon, got {alpha!r}")
    if not omega_ge0 > 0:
        raise ConfigError(f"omega_ge0 must be positive, got {omega_ge0!r}")
    e_c = -HBAR * alpha
    e_j = (HBAR * omega_ge0 + e_c) ** 2 / (8.0 * e_c)
    if e_j / e_c < 20.0:
        raise ConfigError(
            f"E_J_max/E_C = {e_j / e_c:.3g} < 20: parameters are outside the transmon regime"
        )
    out = DerivedTransmonEnergies(E_C=e_c, E_J_max=e_j)
    rebuilt = (math.sqrt(8.0 * e_c * e_j) - e_c) / HBAR
    if not math.isclose(rebuilt, omega_ge0, rel_tol=1e-9):
        raise ConfigError("transmon energy round trip failed")  # pragma: no cover
    return out


@dataclass(frozen=True)
class CycleSchedule:
    """Stroke timings (ns), flux pulse (flux quanta) and QCR amplitudes (Delta/e)."""

    phi_ac: float
    tau_p: float = 200.0
    tau_1: float = 50.0
    tau_2: float = 300.0
    tau_3: float = 50.0
    tau_4: float = 200.0
    phi_dc: float = 0.0
    A_h: float = 2.16
    A_c: float = 1.08
    square_period: float = 100.0
    n_cycles: int = 3
    prep_drive: str = "idle"

    def __post_init__(self):
        for name in ("tau_p", "tau_1", "tau_2", "tau_3", "tau_4", "square_period"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"schedule.{name} must be > 0, got {getattr(self, name)!r}")
        if not math.isclose(self.tau_1, self.tau_3, rel_tol=0, abs_tol=1e-12):
            raise ConfigError("schedule.tau_1 and schedule.tau_3 must be equal (symmetric ramps)")
        for name in ("tau_2", "tau_4"):
            ratio = getattr(self, name) / self.square_period
            if abs(ratio - round(ratio)) > 1e-9:
                raise ConfigError(
                    f"schedule.square_period={self.square_period} does not divide schedule.{name}"
                )
        if self.A_h < 0 or self.A_c < 0:
            raise ConfigError("schedule QCR amplitudes A_h, A_c must be >= 0")
        if not isinstance(self.n_cycles, int) or isinstance(self.n_cycles, bool) or self.n_cycles < 1:
            raise ConfigError(f"schedule.n_cycles must be an integer >= 1, got {self.n_cycles!r}")
        if self.prep_drive not in PREP_DRIVES:
            raise ConfigError(f"schedule.prep_drive must be one of {PREP_DRIVES}, got {self.prep_drive!r}")
        if abs(self.phi_dc) >= 0.5 or abs(self.phi_dc + self.phi_ac) >= 0.5:
            raise ConfigError("schedule flux |phi_dc + phi_ac| must stay below 0.5 (half-flux region)")

    @property
    def tau_cyc(self) -> float:
        return self.tau_1 + self.tau_2 + self.tau_3 + self.tau_4

    @property
    def t_end(self) -> float:
        return self.tau_p + self.n_cycles * self.tau_cyc

    def stroke_times(self, cycle: int = 0) -> tuple[float, float, float, float, float]:
        """(t_A, t_B, t_C, t_D, t_A') of cycle ``cycle`` (0-based)."""
        t_a = self.tau_p + cycle * self.tau_cyc
        t_b = t_a + self.tau_1
        t_c = t_b + self.tau_2
        t_d = t_c + self.tau_3
        return t_a, t_b, t_c, t_d, t_d + self.tau_4


@dataclass(frozen=True)
class InitialState:
    kind: str = "gibbs"
    T: float | None = None  # mK; None means the bath temperature T_N
    populations: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in ("gibbs", "ground", "custom"):
            raise ConfigError(f"initial_state.kind must be gibbs, ground or custom, got {self.kind!r}")
        if self.kind == "gibbs" and self.T is not None and not self.T > 0:
            raise ConfigError("initial_state.T must be > 0")
        if self.kind == "custom":
            if self.populations is None:
                raise ConfigError("initial_state.populations is required for kind=custom")
            if any(p < 0 for p in self.populations) or abs(sum(self.populations) - 1) > 1e-9:
                raise ConfigError("initial_state.populations must be non-negative and sum to 1")


@dataclass(frozen=True)
class SimulationSettings:
    dt: float = 0.02  # ns
    stride: int = 50  # integrator steps per stored sample
    seed: int = 0
    method: str = "populations"
    ideal_ramps: bool = False  # switch off all dissipation on the flux ramps
    initial_state: InitialState = field(default_factory=InitialState)
    max_gamma_dt: float = 0.01

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError("simulation.dt must be > 0")
        if not isinstance(self.stride, int) or self.stride < 1:
            raise ConfigError("simulation.stride must be an integer >= 1")
        if self.method not in METHODS:
            raise ConfigError(f"simulation.method must be one of {METHODS}, got {self.method!r}")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("simulation.seed must be a non-negative integer")


@dataclass(frozen=True)
class EngineConfig:
    device: DeviceParams
    schedule: CycleSchedule
    simulation: SimulationSettings = field(default_factory=SimulationSettings)

    def __post_init__(self):
        if self.device.n_levels < 2:  # pragma: no cover - DeviceParams guards this
            raise ConfigError("n_levels")
        # stroke boundaries must fall on the integration grid
        for name in ("tau_p", "tau_1", "tau_2", "tau_3", "tau_4", "square_period"):
            steps = getattr(self.schedule, name) / self.simulation.dt
            if abs(steps - round(steps)) > 1e-6:
                raise ConfigError(f"schedule.{name} is not a whole number of simulation.dt steps")

    @property
    def energies(self) -> DerivedTransmonEnergies:
        return derive_transmon_energies(self.device.omega_ge0, self.device.alpha)

    def replace(self, **sections: Any) -> "EngineConfig":
        """Copy with per-section field overrides, e.g. ``replace(device={"T_N": 80})``."""
        parts = {}
        for name in ("device", "schedule", "simulation"):
            current = getattr(self, name)
            parts[name] = dataclasses.replace(current, **sections.get(name, {}))
        return EngineConfig(**parts)

    def to_dict(self) -> dict:
        return {
            "device": dataclasses.asdict(self.device),
            "schedule": dataclasses.asdict(self.schedule),
            "simulation": dataclasses.asdict(self.simulation),
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def flux_amplitude_for_detuning(target_detuning: float, params: DeviceParams,
                                phi_dc: float = 0.0, tol: float = 1e-12) -> float:
    """Flux pulse amplitude (flux quanta) producing ``target_detuning`` (rad/ns).

    Bisection of omega_ge(phi_dc + phi_ac) - omega_ge(phi_dc) on phi_ac in [0, 0.5 - |phi_dc|).
    """
    from .transmon import transition_frequency

    if target_detuning > 0:
        raise UnreachableDetuningError("flux pulses can only lower the transition frequency")
    if target_detuning == 0:
        return 0.0
    energies = derive_transmon_energies(params.omega_ge0, params.alpha)
    base = transition_frequency(phi_dc, energies)
    sign = 1.0 if phi_dc >= 0 else -1.0
    hi = 0.5 - abs(phi_dc) - 1e-12

    def residual(phi_ac):
        return _omega_unchecked(phi_dc + sign * phi_ac, energies) - base - target_detuning

    # frequency must stay strictly positive at the root
    if base + target_detuning <= 0 or residual(hi) > 0:
        raise UnreachableDetuningError(
            f"detuning {target_detuning:.6g} rad/ns is not reachable below the half-flux point"
        )
    root = optimize.bisect(residual, 0.0, hi, xtol=tol, rtol=1e-15, maxiter=200)
    return sign * root


def _omega_unchecked(phi: float, energies: DerivedTransmonEnergies) -> float:
    e_j = energies.E_J_max * abs(math.cos(math.pi * phi))
    return (math.sqrt(8.0 * energies.E_C * e_j) - energies.E_C) / HBAR


def operating_schedule(device: DeviceParams | None = None, **overrides: Any) -> CycleSchedule:
    device = device or DeviceParams()
    kwargs = dict(overrides)
    if "phi_ac" not in kwargs:
        kwargs["phi_ac"] = flux_amplitude_for_detuning(
            OPERATING_DETUNING, device, phi_dc=kwargs.get("phi_dc", 0.0))
    return CycleSchedule(**kwargs)


def calibrated_device(**overrides: Any) -> DeviceParams:
    return DeviceParams(**{**CALIBRATED_BATH, **overrides})


def default_config(n_cycles: int = 3, **simulation: Any) -> EngineConfig:
    """Engine schedule with the calibrated bath parameters and a heating preparation pulse."""
    device = calibrated_device()
    schedule = operating_schedule(device, n_cycles=n_cycles, prep_drive=CALIBRATED_PREP_DRIVE)
    return EngineConfig(device, schedule, SimulationSettings(**simulation))


# --- JSON loading ---------------------------------------------------------

_SECTIONS = {"device": DeviceParams, "schedule": CycleSchedule, "simulation": SimulationSettings}


def _check_keys(section: str, given: dict, cls) -> None:
    if not isinstance(given, dict):
        raise ConfigError(f"config section {section!r} must be an object")
    allowed = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(given) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {section}: {', '.join(unknown)}")


def config_from_dict(data: dict) -> EngineConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(data) - set(_SECTIONS) - {"preset"})
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    for name, cls in _SECTIONS.items():
        _check_keys(name, data.get(name, {}), cls)
    preset = data.get("preset", "placeholder")
    if preset not in PRESETS:
        raise ConfigError(f"preset must be one of {PRESETS}, got {preset!r}")

    try:
        dev_kw = dict(data.get("device", {}))
        sched_kw = dict(data.get("schedule", {}))
        if preset == "calibrated":
            dev_kw = {**CALIBRATED_BATH, **dev_kw}
            sched_kw.setdefault("prep_drive", CALIBRATED_PREP_DRIVE)
        device = DeviceParams(**dev_kw)
        schedule = operating_schedule(device, **sched_kw)
        sim_kw = dict(data.get("simulation", {}))
        if "initial_state" in sim_kw:
            init = sim_kw["initial_state"]
            if not isinstance(init, dict):
                raise ConfigError("simulation.initial_state must be an object")
            _check_keys("simulation.initial_state", init, InitialState)
            if init.get("populations") is not None:
                init = {**init, "populations": tuple(float(p) for p in init["populations"])}
            sim_kw["initial_state"] = InitialState(**init)
        simulation = SimulationSettings(**sim_kw)
        return EngineConfig(device, schedule, simulation)
    except TypeError as exc:  # wrong value types reaching dataclass checks
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path) -> EngineConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return config_from_dict(data)
