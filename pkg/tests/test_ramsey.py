import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from qotto.config import DeviceParams, flux_amplitude_for_detuning
from qotto.errors import ConfigError, DataError, FitError
from qotto.ramsey import (RamseyFringe, fit_fringe, flux_detuning, fringe_model, read_fringe_csv,
                          simulate_sweep, synthetic_fringe, unwrap_sweep, wrap_phase, write_fringe_csv)

DW_OP = -2 * math.pi * 0.0824  # rad/ns
TAU_OP = 50.0


def test_fringe_model_examples():
    phi = np.linspace(0, 2 * math.pi, 9)
    assert np.allclose(fringe_model(phi, 0.0, 30.0, T2=60.0, C=0.2), np.cos(phi) * math.exp(-0.5) + 0.2)
    assert np.allclose(fringe_model(phi, 0.0, 30.0), np.cos(phi))
    off = -DW_OP * TAU_OP
    assert off == pytest.approx(2 * math.pi * 4.12)
    assert wrap_phase(off) == pytest.approx(0.754, abs=1e-3)
    with pytest.raises(ConfigError):
        fringe_model(phi, 0.0, 1.0, T2=0.0)


def test_noiseless_operating_point():
    fit = fit_fringe(synthetic_fringe(-DW_OP, TAU_OP))
    assert abs(fit.principal_phase - wrap_phase(2 * math.pi * 4.12)) < 1e-6
    assert fit.aliased is False and fit.amplitude == pytest.approx(1.0)
    assert fit.window == pytest.approx(2 * math.pi / TAU_OP)


def test_zero_detuning():
    fit = fit_fringe(synthetic_fringe(0.0, 40.0, C=0.3))
    assert abs(fit.phase) < 1e-12 and fit.C == pytest.approx(0.3)


def test_grid_round_trip():
    for dw in np.linspace(-0.6, 0.6, 5):
        for tau in (10.0, 25.0, 50.0, 80.0):
            fit = fit_fringe(synthetic_fringe(dw, tau, T2=200.0, amplitude=0.7, C=0.1))
            assert abs(wrap_phase(fit.phase - dw * tau)) < 1e-6


def test_phase_hint_selects_branch():
    true = DW_OP * TAU_OP
    fit = fit_fringe(synthetic_fringe(DW_OP, TAU_OP), phase_hint=true + 1.0)
    assert fit.phase == pytest.approx(true, abs=1e-6)
    assert fit.delta_omega == pytest.approx(DW_OP, rel=1e-7)
    assert fit.aliased


@given(st.floats(-0.5, 0.5), st.floats(-5, 5))
def test_offset_invariance(dw, shift):
    a = synthetic_fringe(dw, 30.0)
    b = RamseyFringe(a.phases, a.amplitudes + shift, a.tau)
    fa, fb = fit_fringe(a), fit_fringe(b)
    assert abs(wrap_phase(fa.phase - fb.phase)) < 1e-9
    assert fb.C == pytest.approx(fa.C + shift, abs=1e-9)


def test_noise_statistics():
    errs = np.array([
        wrap_phase(fit_fringe(synthetic_fringe(DW_OP, TAU_OP, noise_sigma=0.05, seed=s)).phase - DW_OP * TAU_OP)
        for s in range(200)])
    assert np.mean(np.abs(errs) < 0.02) >= 0.95


def test_fit_errors():
    with pytest.raises(FitError):
        fit_fringe(RamseyFringe(np.linspace(0, 2 * math.pi, 16, endpoint=False), np.full(16, 0.3), 10.0))
    with pytest.raises(DataError):
        fit_fringe(synthetic_fringe(0.1, 10.0, n_phases=6))
    half = np.linspace(0, math.pi, 16)
    with pytest.raises(DataError):
        fit_fringe(RamseyFringe(half, np.cos(half), 10.0))
    with pytest.raises(DataError):
        RamseyFringe(np.zeros(3), np.zeros(4), 1.0)
    with pytest.raises(ConfigError):
        RamseyFringe(np.zeros(3), np.zeros(3), 0.0)


def test_sweep_recovers_operating_point():
    dev = DeviceParams()
    a_op = flux_amplitude_for_detuning(DW_OP, dev)
    amps = np.linspace(0.0, a_op, 60)
    res = simulate_sweep(amps, dev, tau=TAU_OP)
    assert not res.refused.any()
    assert np.allclose(res.detuning, flux_detuning(amps, dev), atol=1e-9)
    assert res.phase[-1] == pytest.approx(-2 * math.pi * 4.12, abs=1e-6)
    assert res.aliased[-1] and not res.aliased[0]


def test_sweep_refuses_after_continuity_loss():
    dev = DeviceParams()
    a_op = flux_amplitude_for_detuning(DW_OP, dev)
    res = simulate_sweep(np.linspace(0.0, a_op, 4), dev, tau=TAU_OP)
    assert res.refused[-1] and np.isnan(res.detuning[-1])
    idx = np.argmax(res.refused)
    assert res.refused[idx:].all() and not res.refused[:idx].any()


def test_unwrap_validation(tmp_path):
    with pytest.raises(DataError):
        unwrap_sweep([0.1, 0.2], [0.0, 0.1], 10.0)
    with pytest.raises(DataError):
        unwrap_sweep([0.0, 0.2, 0.1], [0.0, 0.1, 0.2], 10.0)
    res = unwrap_sweep([0.0, 0.1, 0.2, 0.3, 0.4], wrap_phase([0.0, -1.2, -2.4, -3.6, -4.8]), 10.0)
    assert np.allclose(res.phase, [0.0, -1.2, -2.4, -3.6, -4.8])
    assert res.aliased.tolist() == [False, False, False, True, True]
    res.write_csv(tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "flux_amplitude,detuning_radns,aliased_flag" and lines[-1].endswith(",1")


def test_fringe_csv(tmp_path):
    f = synthetic_fringe(0.2, 20.0)
    write_fringe_csv(tmp_path / "f.csv", f)
    g = read_fringe_csv(tmp_path / "f.csv", 20.0)
    assert np.array_equal(g.amplitudes, f.amplitudes)
    (tmp_path / "bad.csv").write_text("phase_rad\n1\n")
    with pytest.raises(DataError):
        read_fringe_csv(tmp_path / "bad.csv", 20.0)
