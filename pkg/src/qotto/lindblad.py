"""Time-dependent Lindblad master equation for the truncated transmon.

The Hamiltonian is diagonal in the instantaneous eigenbasis and the jump
operators connect adjacent levels only, so a diagonal initial state stays
diagonal. Two integration paths are provided:

* ``populations`` (default): classical fourth-order Runge-Kutta on the
  population vector (Pauli rate equation). The ODE is linear, so each RK4
  step is applied as a precomputed propagator matrix.
* ``density_matrix``: the same RK4 scheme on the full density matrix with
  the commutator and Lindblad dissipators evaluated explicitly.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import EngineConfig, InitialState
from .constants import HBAR, KB
from .errors import ConfigError, IntegratorInstabilityError, OttoError
from .nis import RateTable, qcr_voltage
from .transmon import eigenfrequencies, external_flux, stroke_label, transition_frequency

log = logging.getLogger(__name__)


@dataclass
class Trajectory:
    times: np.ndarray  # ns
    populations: np.ndarray  # (n_samples, n_levels)
    omega_m: np.ndarray  # rad/ns, (n_samples, n_levels)
    mean_energy: np.ndarray  # µeV
    qcr_voltage: np.ndarray  # Delta/e, signed
    phi_ext: np.ndarray  # flux quanta
    stroke_label: np.ndarray  # prep, AB, BC, CD, DA
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_levels(self) -> int:
        return self.populations.shape[1]

    @property
    def omega_ge(self) -> np.ndarray:
        return self.omega_m[:, 1]

    def index_of(self, t: float) -> int:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-6:
            raise OttoError(f"no trajectory sample at t = {t} ns")
        return i

    def write_csv(self, path: str | Path) -> None:
        n = self.n_levels
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["t_ns", "stroke", "phi_ext", "v_qcr_delta_over_e"]
                         + [f"p_{m}" for m in range(n)] + ["omega_ge_radns", "energy_ueV"])
            for i in range(self.times.size):
                out.writerow([repr(float(self.times[i])), self.stroke_label[i],
                              repr(float(self.phi_ext[i])), repr(float(self.qcr_voltage[i]))]
                             + [repr(float(x)) for x in self.populations[i]]
                             + [repr(float(self.omega_ge[i])), repr(float(self.mean_energy[i]))])


# --- states -------------------------------------------------------------------------

def gibbs_populations(energies, T: float) -> np.ndarray:
    """Boltzmann populations exp(-E_n / kT) / Z for energies in µeV."""
    if not T > 0:
        raise ConfigError("temperature must be > 0")
    e = np.asarray(energies, dtype=float)
    w = np.exp(-(e - e.min()) / (KB * T))
    return w / w.sum()


def initial_populations(init: InitialState, omega_m, T_N: float) -> np.ndarray:
    n = len(omega_m)
    if init.kind == "ground":
        p = np.zeros(n)
        p[0] = 1.0
        return p
    if init.kind == "custom":
        p = np.asarray(init.populations, dtype=float)
        if p.size != n:
            raise ConfigError(f"initial populations have {p.size} entries, n_levels is {n}")
        return p / p.sum()
    return gibbs_populations(HBAR * np.asarray(omega_m), init.T if init.T is not None else T_N)


def check_density_matrix(rho: np.ndarray, herm_tol=1e-12, trace_tol=1e-10, psd_tol=1e-9) -> None:
    if np.max(np.abs(rho - rho.conj().T)) > herm_tol:
        raise OttoError("density matrix is not Hermitian")
    if abs(np.trace(rho).real - 1.0) > trace_tol:
        raise OttoError("density matrix trace differs from 1")
    if np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min() < -psd_tol:
        raise OttoError("density matrix is not positive semidefinite")


# --- generators -----------------------------------------------------------------------

def dissipator_apply(rho: np.ndarray, down, up) -> np.ndarray:
    """Sum of D(|n><n+1|) weighted by ``down[n]`` and D(|n+1><n|) weighted by ``up[n]``.

    D(O) rho = O rho O^dag - {O^dag O, rho} / 2.
    """
    d = rho.shape[0]
    out = np.zeros_like(rho, dtype=complex)
    for n in range(d - 1):
        for rate, src, dst in ((down[n], n + 1, n), (up[n], n, n + 1)):
            if rate == 0.0:
                continue
            # O = |dst><src|: O rho O^dag = rho[src, src] |dst><dst|; O^dag O = |src><src|
            out[dst, dst] += rate * rho[src, src]
            out[src, :] -= 0.5 * rate * rho[src, :]
            out[:, src] -= 0.5 * rate * rho[:, src]
    return out


def jump_dissipator(rho: np.ndarray, ops, rates) -> np.ndarray:
    """Generic sum_k rate_k D(O_k) rho with explicit operator products."""
    out = np.zeros_like(rho, dtype=complex)
    for op, rate in zip(ops, rates):
        if rate == 0.0:
            continue
        od = op.conj().T
        odo = od @ op
        out += rate * (op @ rho @ od - 0.5 * (odo @ rho + rho @ odo))
    return out


def lowering_ops(d: int):
    ops = []
    for n in range(d - 1):
        o = np.zeros((d, d), dtype=complex)
        o[n, n + 1] = 1.0
        ops.append(o)
    return ops


def rate_matrix(down, up) -> np.ndarray:
    """Generator K of dp/dt = K p for adjacent-level jumps. Broadcasts over leading axes."""
    down = np.asarray(down, dtype=float)
    up = np.asarray(up, dtype=float)
    d = down.shape[-1] + 1
    K = np.zeros(down.shape[:-1] + (d, d))
    idx = np.arange(d - 1)
    K[..., idx, idx + 1] += down  # n+1 -> n gain for n
    K[..., idx + 1, idx + 1] -= down
    K[..., idx + 1, idx] += up  # n -> n+1 gain for n+1
    K[..., idx, idx] -= up
    return K


def _rk4_propagators(K1, K2, K3, h):
    """Per-step RK4 update matrices for y' = K(t) y with K at t, t+h/2, t+h."""
    d = K1.shape[-1]
    eye = np.broadcast_to(np.eye(d), K1.shape)
    a = eye + 0.5 * h * K1
    k2 = K2 @ a
    b = eye + 0.5 * h * k2
    k3 = K2 @ b
    c = eye + h * k3
    k4 = K3 @ c
    return eye + (h / 6.0) * (K1 + 2.0 * k2 + 2.0 * k3 + k4)


def dissipator_superops(d: int):
    """Row-major superoperators of D(|n><n+1|) and D(|n+1><n|) for n = 0..d-2.

    With vec(A rho B) = (A kron B^T) vec(rho) for row-major flattening.
    """
    eye = np.eye(d)
    out = []
    for ops in (lowering_ops(d), [o.conj().T for o in lowering_ops(d)]):
        mats = []
        for o in ops:
            odo = o.conj().T @ o
            mats.append(np.kron(o, o.conj()) - 0.5 * (np.kron(odo, eye) + np.kron(eye, odo.T)))
        out.append(np.array(mats))
    return out[0], out[1]


def liouvillian(omegas, down, up, superops) -> np.ndarray:
    """Generator L with d vec(rho)/dt = L vec(rho) (row-major vec)."""
    lower, raise_ = superops
    w = np.asarray(omegas, dtype=float)
    L = np.tensordot(down, lower, axes=(0, 0)) + np.tensordot(up, raise_, axes=(0, 0))
    L = L.astype(complex)
    L[np.diag_indices_from(L)] += -1j * (w[:, None] - w[None, :]).ravel()
    return L


# --- the model ----------------------------------------------------------------------

class MasterEquation:
    """Rates, spectrum and right-hand sides for one configuration."""

    def __init__(self, config: EngineConfig, rate_table: RateTable | None = None):
        self.config = config
        self.params = config.device
        self.schedule = config.schedule
        self.energies = config.energies
        self.rates = rate_table or RateTable(config.device, config.schedule,
                                             ideal_ramps=config.simulation.ideal_ramps)
        self.d = config.device.n_levels
        self.superops = dissipator_superops(self.d)

    def omegas(self, t):
        phi = external_flux(t, self.schedule)
        w = transition_frequency(phi, self.energies)
        return eigenfrequencies(w, self.params.alpha, self.d)

    def step_label(self, t: float, dt: float) -> str:
        """Stroke owning the step [t, t + dt]; rate discontinuities sit on step edges."""
        return stroke_label(min(t + 0.5 * dt, self.schedule.t_end), self.schedule)

    def generator(self, t: float, label: str) -> np.ndarray:
        down, up = self.rates.rates([t], [label])
        return liouvillian(self.omegas(t), down[0], up[0], self.superops)

    def rhs(self, t: float, rho: np.ndarray, label: str) -> np.ndarray:
        """-i[H, rho]/hbar + dissipators, with H = diag(hbar omega_m)."""
        return (self.generator(t, label) @ rho.ravel()).reshape(rho.shape)

    def step(self, rho: np.ndarray, t: float, dt: float) -> np.ndarray:
        """One classical RK4 step of the full master equation."""
        if not dt > 0:
            raise ConfigError("dt must be > 0")
        if dt > self.config.simulation.dt * (1 + 1e-12):
            raise ConfigError(f"dt = {dt} exceeds the configured maximum {self.config.simulation.dt}")
        label = self.step_label(t, dt)
        gens = (self.generator(t, label), self.generator(t + 0.5 * dt, label), self.generator(t + dt, label))
        return self._finish(_rk4_vec(rho.ravel(), gens, dt).reshape(rho.shape), t + dt)

    def _finish(self, new: np.ndarray, t_new: float) -> np.ndarray:
        new = 0.5 * (new + new.conj().T)
        tr = np.trace(new).real
        if abs(tr - 1.0) > 1e-12:
            log.info("renormalizing trace drift %.3e at t=%.4f ns", tr - 1.0, t_new)
            new = new / tr
        lam = np.linalg.eigvalsh(new).min()
        if lam < -1e-6:
            raise IntegratorInstabilityError(
                f"density matrix lost positivity (min eigenvalue {lam:.3e}) at t={t_new:.4f} ns; "
                "reduce simulation.dt")
        return new


# --- driver -------------------------------------------------------------------------

def _segments(config: EngineConfig):
    """(label, start_step, n_steps) for every stroke in time order."""
    s = config.schedule
    dt = config.simulation.dt
    bounds = [("prep", 0.0, s.tau_p)]
    for c in range(s.n_cycles):
        t_a, t_b, t_c, t_d, t_e = s.stroke_times(c)
        bounds += [("AB", t_a, t_b), ("BC", t_b, t_c), ("CD", t_c, t_d), ("DA", t_d, t_e)]
    out = []
    for label, a, b in bounds:
        k0 = int(round(a / dt))
        k1 = int(round(b / dt))
        out.append((label, k0, k1 - k0))
    return out


def simulate(config: EngineConfig, rate_table: RateTable | None = None) -> Trajectory:
    """Integrate preparation plus all cycles and sample every ``stride`` steps."""
    model = MasterEquation(config, rate_table)
    sim = config.simulation
    dt = sim.dt
    gmax = model.rates.max_rate()
    if gmax * dt >= sim.max_gamma_dt:
        raise ConfigError(f"max rate x dt = {gmax * dt:.3g} >= {sim.max_gamma_dt}: reduce simulation.dt")

    n_steps = int(round(config.schedule.t_end / dt))
    sample_steps = np.arange(0, n_steps + 1, sim.stride)
    if sample_steps[-1] != n_steps:
        sample_steps = np.append(sample_steps, n_steps)
    times = sample_steps * dt

    w0 = model.omegas(0.0)
    p0 = initial_populations(sim.initial_state, w0, config.device.T_N)
    try:
        if sim.method == "populations":
            pops, diag = _run_populations(model, p0, sample_steps)
        else:
            pops, diag = _run_density_matrix(model, p0, sample_steps)
    except OttoError as exc:
        raise type(exc)(f"{exc}") from exc

    phi = external_flux(times, config.schedule)
    omega_m = eigenfrequencies(transition_frequency(phi, model.energies), config.device.alpha, model.d)
    energy = HBAR * np.sum(omega_m * pops, axis=1)
    labels = np.array([stroke_label(t, config.schedule) for t in times])
    diag["max_gamma_dt"] = gmax * dt
    return Trajectory(times=times, populations=pops, omega_m=omega_m, mean_energy=energy,
                      qcr_voltage=qcr_voltage(times, config.schedule), phi_ext=phi,
                      stroke_label=labels, diagnostics=diag)


def _run_populations(model: MasterEquation, p0, sample_steps):
    dt = model.config.simulation.dt
    n_total = int(sample_steps[-1])
    sample_set = set(int(k) for k in sample_steps)
    out = np.empty((len(sample_steps), model.d))
    out[0] = p0
    row = 1
    p = p0.copy()
    k = 0
    for label, k0, n in _segments(model.config):
        if n == 0:
            continue
        if label in ("AB", "CD"):
            t = (k0 + np.arange(n)) * dt
            stage = np.concatenate([t, t + 0.5 * dt, t + dt])
            down, up = model.rates.rates(stage, [label] * stage.size)
            K = rate_matrix(down, up)
            S = _rk4_propagators(K[:n], K[n:2 * n], K[2 * n:], dt)
            for j in range(n):
                p = S[j] @ p
                k += 1
                if k in sample_set:
                    out[row] = p
                    row += 1
        else:
            down, up = model.rates.plateau_rates(label)
            K = rate_matrix(down, up)
            S = _rk4_propagators(K, K, K, dt)
            # jump between sample points with matrix powers of the constant step
            cache = {}
            end = k0 + n
            while k < end:
                nxt = min([s for s in _next_samples(k, end, sample_steps)] or [end])
                m = nxt - k
                if m not in cache:
                    cache[m] = np.linalg.matrix_power(S, m)
                p = cache[m] @ p
                k = nxt
                if k in sample_set:
                    out[row] = p
                    row += 1
    if k != n_total or row != len(sample_steps):
        raise OttoError("internal error: sample bookkeeping mismatch")  # pragma: no cover
    return out, {"method": "populations"}


def _next_samples(k, end, sample_steps):
    i = np.searchsorted(sample_steps, k, side="right")
    if i < len(sample_steps) and sample_steps[i] <= end:
        return [int(sample_steps[i])]
    return []


def _rk4_vec(v, gens, h):
    L1, L2, L3 = gens
    k1 = L1 @ v
    k2 = L2 @ (v + 0.5 * h * k1)
    k3 = L2 @ (v + 0.5 * h * k2)
    k4 = L3 @ (v + h * k3)
    return v + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


_CHUNK = 512


def _stage_generators(model: MasterEquation, label: str, k_start: int, m: int, dt: float):
    """Liouvillians at t, t + dt/2, t + dt for ``m`` steps (one shared triple on plateaus)."""
    if label not in ("AB", "CD"):
        t = k_start * dt
        L = model.generator(t, label)
        return [(L, L, L)]
    t = (k_start + np.arange(m)) * dt
    stage = np.concatenate([t, t + 0.5 * dt, t + dt])
    down, up = model.rates.rates(stage, [label] * stage.size)
    w = model.omegas(stage)
    lower, raise_ = model.superops
    L = (np.einsum("sp,pij->sij", down, lower) + np.einsum("sp,pij->sij", up, raise_)).astype(complex)
    dd = model.d * model.d
    L[:, np.arange(dd), np.arange(dd)] += -1j * (w[:, :, None] - w[:, None, :]).reshape(-1, dd)
    return [(L[j], L[j + m], L[j + 2 * m]) for j in range(m)]


def _run_density_matrix(model: MasterEquation, p0, sample_steps):
    """Full RK4 on vec(rho); the stage generators are assembled from tabulated rates."""
    dt = model.config.simulation.dt
    d = model.d
    rho = np.diag(p0).astype(complex)
    sample_set = set(int(k) for k in sample_steps)
    n_s = len(sample_steps)
    pops = np.empty((n_s, d))
    offdiag = np.empty(n_s)
    trace_dev = np.empty(n_s)
    herm = np.empty(n_s)
    min_eig = np.empty(n_s)

    def record(i, r):
        pops[i] = r.diagonal().real
        offdiag[i] = np.max(np.abs(r - np.diag(r.diagonal())))
        trace_dev[i] = abs(np.trace(r).real - 1.0)
        herm[i] = np.max(np.abs(r - r.conj().T))
        min_eig[i] = np.linalg.eigvalsh(r).min()

    record(0, rho)
    row = 1
    for label, k0, n in _segments(model.config):
        if n == 0:
            continue
        for c0 in range(0, n, _CHUNK):
            m = min(_CHUNK, n - c0)
            gens = _stage_generators(model, label, k0 + c0, m, dt)
            for j in range(m):
                k = k0 + c0 + j
                g = gens[0] if len(gens) == 1 else gens[j]
                try:
                    rho = model._finish(_rk4_vec(rho.ravel(), g, dt).reshape(d, d), (k + 1) * dt)
                except OttoError as exc:
                    raise type(exc)(f"{exc} (step starting at t={k * dt:.4f} ns)") from exc
                if k + 1 in sample_set:
                    record(row, rho)
                    row += 1
    return pops, {"method": "density_matrix", "max_offdiag": offdiag, "trace_deviation": trace_dev,
                  "hermiticity": herm, "min_eigenvalue": min_eig}


def step(rho: np.ndarray, t: float, dt: float, config: EngineConfig,
         model: MasterEquation | None = None) -> np.ndarray:
    """One RK4 step of the master equation for ``config`` (builds the model when not given)."""
    return (model or MasterEquation(config)).step(rho, t, dt)
