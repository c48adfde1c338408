"""Command-line entry point: ``fce-ddpc {simulate,fit,control,bench,report}``.

Exit codes: 0 success (unstable closed loops included), 1 runtime failure,
2 configuration error.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import jsonschema

from .arx import fit_arx, select_order_aic
from .bench import (BenchmarkConfig, SchemeSpec, TrainedRun, default_grids, grid_search,
                    make_controller, online_config, run_benchmark)
from .hankel import load_dataset, partition, save_dataset
from .plant import (ExcitationSpec, ReferenceSpec, make_reference, measure_snr,
                    run_closed_loop, simulate_open_loop)
from .predictor import PlantModel, benchmark_plant
from .subspace import lq_decompose, thm3_config

_matrix = {"type": "array", "items": {"type": "array", "items": {"type": "number"}}}
_pos_int = {"type": "integer", "minimum": 1}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "plant": {
            "oneOf": [
                {"const": "benchmark"},
                {"type": "object", "additionalProperties": False,
                 "required": ["A", "B", "C", "D", "K"],
                 "properties": {"A": _matrix, "B": _matrix, "C": _matrix, "D": _matrix,
                                "K": _matrix, "sigma2": {"type": "number", "minimum": 0}}},
            ]
        },
        "sigma2": {"type": "number", "minimum": 0},
        "N_data": _pos_int,
        "T": _pos_int,
        "T_v": _pos_int,
        "n_runs": _pos_int,
        "q_o": {"type": "number", "exclusiveMinimum": 0},
        "r": {"type": "number", "exclusiveMinimum": 0},
        "setup": {"enum": [1, 2, 3]},
        "seed": {"type": "integer", "minimum": 0},
        "rho": _pos_int,
        "rho_max": _pos_int,
        "excitation": {
            "type": "object", "additionalProperties": False,
            "properties": {"cutoff": {"type": "number"},
                           "pre_filter_variance": {"type": "number", "minimum": 0}},
        },
        "reference": {
            "type": "object", "additionalProperties": False,
            "properties": {"kind": {"enum": ["square_wave", "multilevel", "constant"]},
                           "period": _pos_int, "amplitude": {"type": "number"}},
        },
        "scheme": {"enum": ["fce", "deepc", "gamma2", "gamma3", "gamma23", "thm3", "mpc_oracle"]},
        "tuning": {"enum": ["offline_oracle", "online", "none"]},
        "params": {"type": "object", "additionalProperties": {"type": ["number", "string"]}},
        "schemes": {
            "type": "array", "minItems": 1,
            "items": {"type": "object", "additionalProperties": False, "required": ["name"],
                      "properties": {"name": {"type": "string"},
                                     "tuning": {"enum": ["offline_oracle", "online", "none"]}}},
        },
        "full_grids": {"type": "boolean"},
        "jobs": _pos_int,
        "verbosity": {"type": "integer", "minimum": 0},
    },
}


class ConfigError(Exception):
    pass


def _setup_logging(level: int) -> None:
    logging.basicConfig(level=max(logging.DEBUG, logging.WARNING - 10 * level),
                        format="%(levelname)s %(name)s: %(message)s")


def load_config(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config not found: {path}")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(x) for x in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid config at {where}: {exc.message}") from exc
    return cfg


def _load(args) -> dict:
    cfg = load_config(args.config)
    _setup_logging(max(args.verbose, cfg.get("verbosity", 0)))
    return cfg


def _plant(cfg: dict) -> PlantModel:
    spec = cfg.get("plant", "benchmark")
    plant = benchmark_plant() if spec == "benchmark" else PlantModel.from_dict(
        {"sigma2": benchmark_plant().sigma2} | spec)
    if "sigma2" in cfg:
        plant = plant.with_sigma2(cfg["sigma2"])
    return plant


def _excitation(cfg: dict, seed: int) -> ExcitationSpec:
    return ExcitationSpec(seed=seed, **cfg.get("excitation", {}))


def _param(v):
    return math.inf if v in ("inf", "Infinity") else float(v)


def _bench_config(cfg: dict, args) -> BenchmarkConfig:
    try:
        return _bench_config_unchecked(cfg, args)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _bench_config_unchecked(cfg: dict, args) -> BenchmarkConfig:
    schemes = None
    if "schemes" in cfg:
        schemes = tuple(SchemeSpec(s["name"], s.get("tuning", "none")) for s in cfg["schemes"])
    kw = dict(plant=_plant(cfg), N_data=cfg.get("N_data", 250), T=cfg.get("T", 20),
              T_v=cfg.get("T_v", 500), n_runs=cfg.get("n_runs", 20), q_o=cfg.get("q_o", 1.0),
              r=cfg.get("r", 5e-6), setup=cfg.get("setup", 1), base_seed=cfg.get("seed", 0),
              rho_max=cfg.get("rho_max", 20), excitation=_excitation(cfg, cfg.get("seed", 0)),
              grids=default_grids(full=True) if cfg.get("full_grids") else None)
    if schemes is not None:
        kw["schemes"] = schemes
    if args.runs is not None:
        kw["n_runs"] = args.runs
    if args.seed is not None:
        kw["base_seed"] = args.seed
    if args.full_grids:
        kw["grids"] = default_grids(full=True)
    return BenchmarkConfig(**kw)


def cmd_simulate(args) -> int:
    cfg = _load(args)
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    plant = _plant(cfg)
    exc = _excitation(cfg, seed)
    N = cfg.get("N_data", 250)
    ds = simulate_open_loop(plant, exc, N, seed)
    save_dataset(ds, args.out)
    snr = measure_snr(plant, exc, N, seed) if plant.sigma2 > 0 else math.inf
    print(f"seed={seed} N_data={N} SNR={snr:.2f} dB -> {args.out}")
    return 0


def _train(cfg: dict, data_path) -> tuple:
    ds = load_dataset(data_path)
    T = cfg.get("T", 20)
    rho = cfg.get("rho") or select_order_aic(ds, cfg.get("rho_max", 20))
    parts = partition(ds, rho, T)
    return ds, rho, parts


def cmd_fit(args) -> int:
    cfg = _load(args)
    ds, rho, parts = _train(cfg, args.data)
    model = fit_arx(parts)
    model.save(args.out)
    print(f"rho={rho} sigma2_hat={model.sigma2_hat:.6g} -> {args.out}")
    return 0


def cmd_control(args) -> int:
    cfg = _load(args)
    bcfg = _bench_config(cfg, args)
    ds, rho, parts = _train(cfg, args.data)
    tr = TrainedRun(ds, rho, fit_arx(parts), lq_decompose(parts.Z_P, parts.U_F, parts.Y_F),
                    bcfg.control_spec(ds.m, ds.p))
    name = cfg.get("scheme", "fce")
    tuning = cfg.get("tuning", "offline_oracle" if name in ("deepc", "gamma23") else "none")
    if name in ("gamma2", "gamma3") and tuning == "none":
        tuning = "offline_oracle"
    if "params" in cfg:
        tuning = "offline_oracle" if name in ("deepc", "gamma2", "gamma3", "gamma23") else tuning
    scheme = SchemeSpec(name, tuning)
    ref_cfg = cfg.get("reference", {})
    ref = make_reference(ReferenceSpec(ref_cfg.get("kind", "square_wave"), bcfg.T_v, bcfg.T,
                                       period=ref_cfg.get("period"),
                                       amplitude=ref_cfg.get("amplitude", 1.0)))
    seed = bcfg.base_seed
    params = None
    if "params" in cfg:
        params = {k: _param(v) for k, v in cfg["params"].items()}
    elif tuning == "offline_oracle":
        params, _ = grid_search(scheme, bcfg.resolved_grids()[name], bcfg.plant, ref,
                                seed + 1, tr, bcfg.T_v, bcfg.r)
    elif tuning == "online" or name == "thm3":
        g = thm3_config(tr.factors, tr.spec.Q_o, tr.spec.p) if name == "thm3" \
            else online_config(name, tr)
        params = {"beta2": g.beta2, "beta3": g.beta3}
    ctrl = make_controller(scheme, tr, bcfg.plant, params)
    res = run_closed_loop(bcfg.plant, ctrl, ref, bcfg.T_v, rho, seed, T=bcfg.T, r=bcfg.r,
                          exc=bcfg.excitation)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    res.to_csv(out / "closed_loop.csv")
    summary = {"scheme": scheme.label, "rho": rho, "seed": seed, "J_a": res.J_a,
               "unstable": res.unstable, "params": params, "steps": len(res.y_log)}
    if hasattr(ctrl, "components"):
        summary["fce_components"] = ctrl.components
    (out / "summary.json").write_text(json.dumps(_finite(summary), indent=2, sort_keys=True) + "\n")
    flag = " (unstable)" if res.unstable else ""
    print(f"{scheme.label}: rho={rho} J_a={res.J_a:.6g}{flag} -> {out}")
    return 0


def _finite(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else ("inf" if obj > 0 else "-inf")
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_finite(v) for v in obj]
    return obj


def cmd_bench(args) -> int:
    cfg = _load(args)
    bcfg = _bench_config(cfg, args)
    jobs = args.jobs if args.jobs is not None else cfg.get("jobs", 1)
    report = run_benchmark(bcfg, jobs=jobs)
    paths = report.write(args.out)
    _print_stats(report.stats)
    print("wrote " + ", ".join(str(p) for p in paths))
    return 0


def _print_stats(stats: dict) -> None:
    print(f"{'scheme':18s} {'median':>10s} {'q1':>10s} {'q3':>10s} {'unstable':>9s}")
    for k, s in stats.items():
        fmt = lambda v: "inf" if v is None or not math.isfinite(v) else f"{v:.5g}"
        print(f"{k:18s} {fmt(s['median']):>10s} {fmt(s['q1']):>10s} {fmt(s['q3']):>10s} "
              f"{s['instability_fraction']:9.2f}")


def cmd_report(args) -> int:
    p = Path(args.report)
    if p.is_dir():
        p = p / "report.json"
    if not p.is_file():
        raise ConfigError(f"report not found: {p}")
    data = json.loads(p.read_text())
    order = data.get("config", {}).get("schemes") or sorted(data["stats"])
    stats = {k: {kk: (math.inf if vv is None else vv) for kk, vv in data["stats"][k].items()}
             for k in order}
    _print_stats(stats)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fce-ddpc", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        p.add_argument("--config", required=True)
        if out:
            p.add_argument("--out", required=True)
        p.add_argument("--seed", type=int)
        p.add_argument("--runs", type=int)
        p.add_argument("--full-grids", action="store_true")
        p.add_argument("--jobs", type=int)
        p.add_argument("-v", "--verbose", action="count", default=0)
        return p

    common(sub.add_parser("simulate", help="generate an open-loop dataset CSV")).set_defaults(
        func=cmd_simulate)
    p = common(sub.add_parser("fit", help="fit the ARX predictor and save it as JSON"))
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_fit)
    p = common(sub.add_parser("control", help="run one closed-loop episode"))
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_control)
    common(sub.add_parser("bench", help="run the Monte-Carlo benchmark")).set_defaults(
        func=cmd_bench)
    p = sub.add_parser("report", help="print statistics of a saved benchmark report")
    p.add_argument("report", help="report.json or the bench output directory")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
