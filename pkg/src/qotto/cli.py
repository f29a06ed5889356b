"""Command-line entry point: ``qotto {simulate, iv, readout, ramsey}``.

Every command validates its inputs before computing, writes its outputs to
``--out`` and finishes with ``manifest.json`` (command line, seed, config
hash, version and a sha256 of every output file). Exit codes: 0 success,
2 configuration error, 3 numerical error, 4 data error.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import (OPERATING_DETUNING, DeviceParams, EngineConfig, config_from_dict,
                     flux_amplitude_for_detuning, load_config)
from .errors import ConfigError, DataError, FitError, NumericalError, OttoError

log = logging.getLogger("qotto")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_DATA, EXIT_OTHER = 0, 2, 3, 4, 1


def _hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()


def _file_hash(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(out: Path, args, config_hash: str, files: list[str], config_path=None) -> None:
    manifest = {
        "command": args.command if not getattr(args, "action", None) else f"{args.command} {args.action}",
        "argv": list(args.argv),
        "config_path": str(config_path) if config_path else None,
        "config_hash": config_hash,
        "seed": getattr(args, "seed", None),
        "output_dir": str(out),
        "version": __version__,
        "outputs": {name: _file_hash(out / name) for name in files},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))


def _outdir(path: str) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
    return out


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _apply_overrides(data: dict, pairs: list[str]) -> dict:
    data = json.loads(json.dumps(data))
    for item in pairs or []:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        key, value = item.split("=", 1)
        section, name = key.split(".", 1)
        data.setdefault(section, {})[name] = _parse_value(value)
    return data


# --- simulate -------------------------------------------------------------------------

def _engine_config(args) -> EngineConfig:
    if args.config:
        load_config(args.config)  # validates the file on its own first
        base = json.loads(Path(args.config).read_text())
    else:
        base = {"preset": "calibrated"}
    if not isinstance(base, dict):
        raise ConfigError("config must be a JSON object")
    data = _apply_overrides(base, args.set)
    sched = data.setdefault("schedule", {})
    sim = data.setdefault("simulation", {})
    if args.cycles is not None:
        sched["n_cycles"] = args.cycles
    if args.seed is not None:
        sim["seed"] = args.seed
    if args.dt is not None:
        sim["dt"] = args.dt
    if args.method is not None:
        sim["method"] = args.method
    return config_from_dict(data)


def cmd_simulate(args) -> int:
    from .lindblad import simulate
    from .nis import RateTable
    from .thermo import saturation_from_report, cycle_report

    cfg = _engine_config(args)
    out = _outdir(args.out)
    rates = RateTable(cfg.device, cfg.schedule, ideal_ramps=cfg.simulation.ideal_ramps)
    traj = simulate(cfg, rates)
    report = cycle_report(traj, cfg.schedule)
    report.meta = {"config_hash": cfg.digest(), "config": cfg.to_dict()}
    data = report.to_dict()
    if cfg.schedule.n_cycles >= 4:
        sat = {}
        for which in ("max", "min"):
            try:
                sat[which] = dataclasses.asdict(saturation_from_report(report, which))
            except FitError as exc:
                sat[which] = {"error": str(exc)}
        data["saturation"] = sat
    traj.write_csv(out / "trajectory.csv")
    rates.write_csv(out / "rates.csv")
    (out / "report.json").write_text(json.dumps(data, indent=2, default=_json_default))
    _write_manifest(out, args, cfg.digest(), ["trajectory.csv", "rates.csv", "report.json"], args.config)
    s = report.summary()
    print(f"cycle 1: Q_abs={s['Q_abs_ueV']:.4g} ueV W_tot={s['W_tot_ueV']:.4g} ueV "
          f"P={s['P_eV_per_s']:.4g} eV/s eta={s['eta']}")
    return EXIT_OK


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o)}")


# --- iv ------------------------------------------------------------------------------

def _device_from(args) -> DeviceParams:
    if args.config:
        return load_config(args.config).device
    return DeviceParams()


def cmd_iv(args) -> int:
    from .nis import IvCurve, extract_junction_params, read_iv_csv, write_iv_csv

    dev = _device_from(args)
    T_N = args.T_N if args.T_N is not None else dev.T_N
    if args.input:
        curve = read_iv_csv(args.input, T_N=T_N, delta_ref=args.delta_ref or dev.Delta)
        out = _outdir(args.out)
        fit = extract_junction_params(curve)
        result = {"Delta_ueV": fit.Delta_hat, "R_T_kohm": fit.R_T_hat, "gamma_D": fit.gamma_D_hat,
                  "T_N_mK": T_N, "diagnostics": fit.diagnostics}
        (out / "extraction.json").write_text(json.dumps(result, indent=2, default=_json_default))
        _write_manifest(out, args, _hash({"input": _file_hash(Path(args.input)), "T_N": T_N}),
                        ["extraction.json"], args.config)
        print(f"Delta={fit.Delta_hat:.4f} ueV R_T={fit.R_T_hat:.4f} kOhm gamma_D={fit.gamma_D_hat:.4g}")
        return EXIT_OK
    if not args.v_max > 0 or args.points < 3:
        raise ConfigError("--v-max must be > 0 and --points >= 3")
    out = _outdir(args.out)
    curve = IvCurve.synthetic(dev.Delta, dev.R_T, dev.gamma_D, T_N, v_max=args.v_max, n=args.points)
    write_iv_csv(out / "iv.csv", curve, dev.Delta)
    _write_manifest(out, args, _hash({"device": dataclasses.asdict(dev), "T_N": T_N, "v_max": args.v_max,
                                      "points": args.points}), ["iv.csv"], args.config)
    return EXIT_OK


# --- readout --------------------------------------------------------------------------

def cmd_readout(args) -> int:
    from . import readout as ro

    def model_from(path):
        return ro.GmmModel.from_dict(ro.read_json(path)) if path else ro.overlap_model()

    if args.action == "sample":
        model = model_from(args.model)
        p = np.asarray(args.populations, dtype=float)
        if p.size != model.k or np.any(p < 0) or abs(p.sum() - 1) > 1e-9:
            raise ConfigError(f"--populations needs {model.k} non-negative values summing to 1")
        if args.n <= 0:
            raise ConfigError("--n must be positive")
        out = _outdir(args.out)
        shots = ro.sample_shots(p, model, args.n, args.seed)
        ro.write_shots_csv(out / "shots.csv", shots)
        ro.write_json(out / "model.json", model.to_dict())
        key = {"populations": p.tolist(), "n": args.n, "model": model.to_dict()}
        _write_manifest(out, args, _hash(key), ["shots.csv", "model.json"], args.model)
    elif args.action == "fit":
        shots = ro.read_shots_csv(args.shots)
        calib = None
        init = None
        if args.calibration:
            ref = model_from(args.calibration)
            calib = {lbl: ref.means[i] for i, lbl in enumerate(ref.labels) if lbl != "hij"}
            init = ref.means
        out = _outdir(args.out)
        fit = ro.fit_gmm(shots, k=args.k, init_means=init, calibration_means=calib)
        ro.write_json(out / "model.json", fit.model.to_dict())
        ro.write_json(out / "fit.json", {"log_likelihood": fit.log_likelihood, "iterations": fit.iterations,
                                         "converged": fit.converged, "regularized": fit.regularized})
        _write_manifest(out, args, _hash({"shots": _file_hash(Path(args.shots)), "k": args.k}),
                        ["model.json", "fit.json"], args.calibration)
    elif args.action == "matrix":
        model = model_from(args.model)
        if not args.radius > 0:
            raise ConfigError("--radius must be > 0")
        out = _outdir(args.out)
        M = ro.correction_matrix(model, args.radius, int(args.n_samples), args.seed)
        ro.write_json(out / "matrix.json", M.to_dict())
        _write_manifest(out, args, _hash({"model": model.to_dict(), "radius": args.radius,
                                          "n_samples": int(args.n_samples)}), ["matrix.json"], args.model)
    elif args.action == "correct":
        model = model_from(args.model)
        M = ro.CorrectionMatrix.from_dict(ro.read_json(args.matrix))
        shots = ro.read_shots_csv(args.shots)
        out = _outdir(args.out)
        counts = ro.count_in_ellipse(shots, model, M.radius)
        res = ro.corrected_populations(counts, M)
        ro.write_json(out / "populations.json", {
            "labels": list(model.labels), "uncorrected_counts": counts.tolist(),
            "corrected_counts": res.corrected_counts.tolist(), "populations": res.populations.tolist(),
            "clamped": res.clamped, "n_shots": shots.n})
        _write_manifest(out, args, _hash({"shots": _file_hash(Path(args.shots)), "model": model.to_dict(),
                                          "matrix": M.to_dict()}), ["populations.json"], args.model)
        print(" ".join(f"{l}={v:.4f}" for l, v in zip(model.labels, res.populations)))
    return EXIT_OK


# --- ramsey ----------------------------------------------------------------------------

_SWEEP_KEYS = {"flux_amplitudes", "amplitude_max", "n_points", "tau", "phi_dc", "n_phases", "T2",
               "amplitude", "C", "noise_sigma", "max_jump", "device"}


def _sweep_settings(args) -> dict:
    data = {}
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read sweep config {args.config}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("sweep config must be a JSON object")
        unknown = sorted(set(data) - _SWEEP_KEYS)
        if unknown:
            raise ConfigError(f"unknown key(s) in sweep config: {', '.join(unknown)}")
    device = DeviceParams(**data.get("device", {}))
    s = {"tau": 50.0, "phi_dc": 0.0, "n_phases": 64, "T2": math.inf, "amplitude": 1.0, "C": 0.0,
         "noise_sigma": 0.0, "max_jump": math.pi / 2, "n_points": 60}
    s.update({k: v for k, v in data.items() if k != "device"})
    if "flux_amplitudes" in s:
        amps = np.asarray(s.pop("flux_amplitudes"), dtype=float)
    else:
        a_max = s.get("amplitude_max")
        if a_max is None:
            a_max = flux_amplitude_for_detuning(OPERATING_DETUNING, device, s["phi_dc"])
        amps = np.linspace(0.0, a_max, int(s["n_points"]))
    s.pop("amplitude_max", None)
    s.pop("n_points", None)
    if not s["tau"] > 0 or int(s["n_phases"]) < 8:
        raise ConfigError("tau must be > 0 and n_phases >= 8")
    if amps.size == 0 or np.any(np.abs(s["phi_dc"] + amps) >= 0.5):
        raise ConfigError("flux amplitudes must be non-empty and stay below half flux")
    s["n_phases"] = int(s["n_phases"])
    return {"device": device, "amplitudes": amps, **s}


def cmd_ramsey(args) -> int:
    from .ramsey import simulate_sweep

    s = _sweep_settings(args)
    out = _outdir(args.out)
    device, amps = s.pop("device"), s.pop("amplitudes")
    res = simulate_sweep(amps, device, seed=args.seed, **s)
    res.write_csv(out / "ramsey_sweep.csv")
    key = {"device": dataclasses.asdict(device), "amplitudes": amps.tolist(),
           **{k: (str(v) if isinstance(v, float) and not math.isfinite(v) else v) for k, v in s.items()}}
    _write_manifest(out, args, _hash(key), ["ramsey_sweep.csv"], args.config)
    print(f"{int(res.aliased.sum())} aliased, {int(res.refused.sum())} refused of {res.flux_amplitude.size}")
    return EXIT_OK


# --- parser ----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qotto", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="integrate the engine and write trajectory and thermodynamics")
    s.add_argument("--config", help="engine config JSON (default: calibrated preset)")
    s.add_argument("--out", required=True)
    s.add_argument("--cycles", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--dt", type=float)
    s.add_argument("--method", choices=("populations", "density_matrix"))
    s.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a config key")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("iv", help="generate an IV curve or extract junction parameters from one")
    s.add_argument("--config", help="engine config JSON supplying device parameters")
    s.add_argument("--out", required=True)
    s.add_argument("--input", help="IV CSV to fit (columns V_delta_over_e or V_uV, and I_nA)")
    s.add_argument("--T-N", dest="T_N", type=float, help="electron temperature in mK")
    s.add_argument("--delta-ref", type=float, help="Delta (µeV) used to scale V_delta_over_e")
    s.add_argument("--v-max", type=float, default=3.0)
    s.add_argument("--points", type=int, default=241)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_iv)

    r = sub.add_parser("readout", help="readout statistics pipeline")
    rsub = r.add_subparsers(dest="action", required=True)
    a = rsub.add_parser("sample")
    a.add_argument("--populations", type=float, nargs="+", required=True)
    a.add_argument("--n", type=int, default=10_000)
    a.add_argument("--model")
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--out", required=True)
    a = rsub.add_parser("fit")
    a.add_argument("--shots", required=True)
    a.add_argument("--calibration", help="model JSON whose means label the fitted components")
    a.add_argument("--k", type=int, default=4)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--out", required=True)
    a = rsub.add_parser("matrix")
    a.add_argument("--model")
    a.add_argument("--radius", type=float, default=1.0)
    a.add_argument("--n-samples", type=float, default=1e6)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--out", required=True)
    a = rsub.add_parser("correct")
    a.add_argument("--shots", required=True)
    a.add_argument("--model")
    a.add_argument("--matrix", required=True)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--out", required=True)
    r.set_defaults(func=cmd_readout)

    s = sub.add_parser("ramsey", help="synthetic flux-amplitude sweep of Ramsey fringes")
    s.add_argument("--config", help="sweep JSON")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_ramsey)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OttoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_OTHER


if __name__ == "__main__":
    sys.exit(main())
