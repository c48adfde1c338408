"""Monte-Carlo comparison of the predictive schemes on a simulated plant.

Each run draws a fresh training set, selects the ARX order by AIC, trains
every scheme on the same data and closes the loop on the same noise
realization. Offline-tuned schemes pick their penalties by closed-loop
experiments on the true plant with a separate tuning seed.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .arx import ArxModel, fit_arx, select_order_aic
from .fce import ControlSpec, FCEController
from .hankel import Dataset, partition
from .plant import (ExcitationSpec, OracleMPCController, ReferenceSpec,
                    make_reference, run_closed_loop, simulate_open_loop)
from .predictor import PlantModel, benchmark_plant
from .subspace import (DeePcConfig, DeePCController, GammaConfig, GammaController,
                       LqFactors, lq_decompose, sigma_from_l33, thm3_config)

SCHEMES = ("fce", "deepc", "gamma2", "gamma3", "gamma23", "thm3", "mpc_oracle")
TUNING_MODES = ("offline_oracle", "online", "none")
INF = math.inf

log = logging.getLogger(__name__)


class AllUnstableError(RuntimeError):
    pass


def _with_ends(values, lo=True, hi=True):
    pts = [float(v) for v in values]
    return ([0.0] if lo else []) + pts + ([INF] if hi else [])


def default_grids(full: bool = False) -> dict:
    """Parameter grids per offline-tuned scheme.

    The reduced grids (at most 25 points) cover a wider range than the full
    ones because the 1/sqrt(N) Hankel scaling shifts where the optimum falls.
    """
    if full:
        b2 = _with_ends(np.logspace(-3, 1, 200))
        b3 = _with_ends(np.logspace(-7, -3, 200))
        b2c = _with_ends(np.logspace(-3, 1, 13))
        b3c = _with_ends(np.logspace(-7, -3, 13))
        l1 = _with_ends(np.logspace(-6, -1, 9))
        l2 = _with_ends(np.logspace(-7, -2.5, 10), hi=False)
    else:
        b2 = _with_ends(np.logspace(-6, 1, 23))
        b3 = _with_ends(np.logspace(-9, -1, 23))
        b2c = [0.0, 1e-5, 1e-4, 1e-3, 1e-2]
        b3c = [1e-6, 1e-4, 1e-3, 1e-2, INF]
        l1 = [0.0, 1e-6, 10 ** -3.5, 1e-1, INF]
        l2 = [0.0, 1e-7, 10 ** -5.5, 1e-4, 10 ** -2.5]
    return {
        "gamma2": [{"beta2": b, "beta3": INF} for b in b2],
        "gamma3": [{"beta2": 0.0, "beta3": b} for b in b3],
        "gamma23": [{"beta2": a, "beta3": b} for a in b2c for b in b3c],
        "deepc": [{"lambda1": a, "lambda2": b} for a in l1 for b in l2],
    }


@dataclass(frozen=True)
class SchemeSpec:
    name: str
    tuning: str = "none"

    def __post_init__(self):
        if self.name not in SCHEMES:
            raise ValueError(f"unknown scheme {self.name!r}")
        if self.tuning not in TUNING_MODES:
            raise ValueError(f"unknown tuning mode {self.tuning!r}")
        if self.tuning == "offline_oracle" and self.name not in ("gamma2", "gamma3", "gamma23", "deepc"):
            raise ValueError(f"{self.name} has no parameters to tune offline")
        if self.tuning == "online" and self.name not in ("gamma2", "gamma3"):
            raise ValueError(f"{self.name} has no online rule")
        if self.tuning == "none" and self.name in ("gamma23", "deepc"):
            raise ValueError(f"{self.name} needs offline tuning")

    @property
    def label(self) -> str:
        suffix = {"offline_oracle": "_offline", "online": "_online", "none": ""}[self.tuning]
        return self.name + suffix


DEFAULT_SCHEMES = (
    SchemeSpec("mpc_oracle"),
    SchemeSpec("fce"),
    SchemeSpec("thm3"),
    SchemeSpec("gamma2", "offline_oracle"),
    SchemeSpec("gamma2", "online"),
    SchemeSpec("gamma3", "offline_oracle"),
    SchemeSpec("gamma3", "online"),
    SchemeSpec("gamma23", "offline_oracle"),
    SchemeSpec("deepc", "offline_oracle"),
)

SETUP_REFERENCES = {1: ("square_wave", "square_wave"),
                    2: ("multilevel", "multilevel"),
                    3: ("square_wave", "multilevel")}


@dataclass(frozen=True)
class BenchmarkConfig:
    plant: PlantModel = field(default_factory=benchmark_plant)
    N_data: int = 250
    T: int = 20
    T_v: int = 500
    n_runs: int = 20
    q_o: float = 1.0
    r: float = 5e-6
    setup: int = 1
    schemes: tuple = DEFAULT_SCHEMES
    grids: Optional[dict] = None
    base_seed: int = 0
    rho_max: int = 20
    excitation: ExcitationSpec = ExcitationSpec()

    def __post_init__(self):
        if self.n_runs < 1:
            raise ValueError("n_runs must be at least 1")
        if self.setup not in SETUP_REFERENCES:
            raise ValueError("setup must be 1, 2 or 3")
        if not self.schemes:
            raise ValueError("no schemes selected")
        grids = self.resolved_grids()
        for s in self.schemes:
            if s.tuning == "offline_oracle" and not grids.get(s.name):
                raise ValueError(f"empty grid for {s.label}")

    def resolved_grids(self) -> dict:
        return default_grids() if self.grids is None else self.grids

    def references(self):
        tune, test = SETUP_REFERENCES[self.setup]
        mk = lambda kind: make_reference(ReferenceSpec(kind, self.T_v, self.T))
        return mk(tune), mk(test)

    def control_spec(self, m: int, p: int) -> ControlSpec:
        return ControlSpec.tracking(np.zeros(p * self.T), self.T, m=m, q_o=self.q_o, r=self.r)


@dataclass(frozen=True)
class TrainedRun:
    """Everything fitted once per dataset and shared by all schemes."""

    dataset: Dataset
    rho: int
    model: ArxModel
    factors: LqFactors
    spec: ControlSpec


def _seeds(base_seed: int, run: int):
    """Data, closed-loop and tuning seeds for one run."""
    ss = np.random.SeedSequence([base_seed, run])
    cl, tune = (int(s) for s in ss.generate_state(2))
    return base_seed + run, cl, tune


def train(cfg: BenchmarkConfig, dataset: Dataset) -> TrainedRun:
    rho = select_order_aic(dataset, cfg.rho_max)
    parts = partition(dataset, rho, cfg.T)
    model = fit_arx(parts)
    factors = lq_decompose(parts.Z_P, parts.U_F, parts.Y_F)
    return TrainedRun(dataset, rho, model, factors, cfg.control_spec(dataset.m, dataset.p))


def online_config(name: str, tr: TrainedRun) -> GammaConfig:
    """Penalty from the noise level: ``sigma_hat^2 Tr(Q_o) / N``."""
    if name == "gamma2":
        return thm3_config(tr.factors, tr.spec.Q_o, tr.spec.p)
    s = sigma_from_l33(tr.factors, tr.spec.p)
    return GammaConfig(beta2=0.0, beta3=s * s * float(np.trace(tr.spec.Q_o)) / tr.factors.N)


def make_controller(scheme: SchemeSpec, tr: TrainedRun, plant: PlantModel,
                    params: Optional[dict] = None):
    name, spec, f = scheme.name, tr.spec, tr.factors
    if name == "fce":
        return FCEController(tr.model, spec)
    if name == "mpc_oracle":
        return OracleMPCController(plant, spec)
    if name == "thm3":
        return GammaController(f, spec, thm3_config(f, spec.Q_o, spec.p), name="thm3")
    if name == "deepc":
        return DeePCController(f, spec, DeePcConfig(**params), name=scheme.label)
    cfg = online_config(name, tr) if scheme.tuning == "online" else GammaConfig(**params)
    return GammaController(f, spec, cfg, name=scheme.label)


def _strength(params: dict) -> tuple:
    """Ordering key for total regularization: hard zeros first, then the finite sum."""
    vals = list(params.values())
    return sum(math.isinf(v) for v in vals), sum(v for v in vals if math.isfinite(v))


def grid_search(scheme, grid, tuning_plant: PlantModel, tuning_reference, seed: int,
                trained: TrainedRun, T_v: int, r: float = 5e-6):
    """Grid point with the lowest closed-loop ``J_a`` on one oracle experiment.

    Ties go to the larger total penalty. Returns ``(params, J_values)``.
    """
    if not grid:
        raise ValueError("empty grid")
    if isinstance(scheme, str):
        scheme = SchemeSpec(scheme, "offline_oracle")
    best, best_J, Js = None, INF, []
    for params in grid:
        ctrl = make_controller(scheme, trained, tuning_plant, params)
        J = run_closed_loop(tuning_plant, ctrl, tuning_reference, T_v, trained.rho,
                            seed, T=trained.spec.T, r=r).J_a
        Js.append(J)
        if J < best_J or (J == best_J and best is not None and _strength(params) > _strength(best)):
            best, best_J = params, J
    log.debug("%s grid search: %d points, best %s (J_a=%.4g)", scheme.label, len(grid), best, best_J)
    if best is None:
        raise AllUnstableError(f"every grid point of {scheme.label} destabilized the loop")
    return dict(best), Js


def _run_one(cfg: BenchmarkConfig, run: int) -> dict:
    data_seed, cl_seed, tune_seed = _seeds(cfg.base_seed, run)
    plant = cfg.plant
    tune_ref, test_ref = cfg.references()
    grids = cfg.resolved_grids()
    t0 = time.perf_counter()
    dataset = simulate_open_loop(plant, cfg.excitation, cfg.N_data, data_seed)
    tr = train(cfg, dataset)
    t_train = time.perf_counter() - t0
    out = {"run": run, "rho": tr.rho, "schemes": {}, "timing": {}}
    for scheme in cfg.schemes:
        rec = {"params": None, "J_a": INF, "unstable": True, "error": None}
        t_search = 0.0
        try:
            params = None
            if scheme.tuning == "offline_oracle":
                t1 = time.perf_counter()
                params, _ = grid_search(scheme, grids[scheme.name], plant, tune_ref,
                                        tune_seed, tr, cfg.T_v, cfg.r)
                t_search = time.perf_counter() - t1
            elif scheme.tuning == "online" or scheme.name == "thm3":
                cfg_g = thm3_config(tr.factors, tr.spec.Q_o, tr.spec.p) \
                    if scheme.name == "thm3" else online_config(scheme.name, tr)
                params = {"beta2": cfg_g.beta2, "beta3": cfg_g.beta3}
            ctrl = make_controller(scheme, tr, plant, params)
            t2 = time.perf_counter()
            res = run_closed_loop(plant, ctrl, test_ref, cfg.T_v, tr.rho, cl_seed,
                                  T=cfg.T, r=cfg.r)
            t_opt = (time.perf_counter() - t2) / max(len(res.y_log), 1)
            rec.update(params=params, J_a=res.J_a, unstable=res.unstable)
        except Exception as exc:  # a failed scheme must not abort the sweep
            rec["error"] = f"{type(exc).__name__}: {exc}"
            t_opt = float("nan")
        out["schemes"][scheme.label] = rec
        if rec["error"]:
            log.warning("run %d %s failed: %s", run, scheme.label, rec["error"])
        out["timing"][scheme.label] = {"training": t_train, "offline_search": t_search,
                                       "optimization": t_opt}
    log.info("run %d done (rho=%d): %s", run, tr.rho,
             ", ".join(f"{k}={v['J_a']:.4g}" for k, v in out["schemes"].items()))
    return out


def _quantile(xs, q: float) -> float:
    h = (len(xs) - 1) * q
    lo, hi = math.floor(h), math.ceil(h)
    if lo == hi or xs[lo] == xs[hi]:
        return float(xs[lo])
    return float(xs[lo] + (h - lo) * (xs[hi] - xs[lo]))


def summarize(samples) -> dict:
    """Median, quartiles, 1.5 IQR whiskers and the share of infinite samples."""
    xs = sorted(float(x) for x in samples)
    if not xs:
        raise ValueError("no samples")
    q1, med, q3 = (_quantile(xs, q) for q in (0.25, 0.5, 0.75))
    iqr = q3 - q1
    lo_fence, hi_fence = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    inside = [x for x in xs if lo_fence <= x <= hi_fence] if math.isfinite(iqr) else xs
    return {
        "n": len(xs),
        "median": med,
        "q1": q1,
        "q3": q3,
        "whisker_low": inside[0] if inside else q1,
        "whisker_high": inside[-1] if inside else q3,
        "n_outliers": len(xs) - len(inside),
        "instability_fraction": sum(1 for x in xs if math.isinf(x)) / len(xs),
    }


@dataclass(frozen=True)
class BenchmarkReport:
    config: dict
    samples: dict  # label -> list of J_a
    unstable: dict  # label -> list of bool
    params: dict  # label -> list of selected parameters
    errors: dict  # label -> list of error strings or None
    rho: list
    stats: dict
    timing: dict = field(default=None, compare=False)  # label -> {phase: [seconds]}

    def to_json(self) -> str:
        """Deterministic JSON; infinities are written as ``null``."""
        return json.dumps(_jsonable({
            "config": self.config, "rho": self.rho, "samples": self.samples,
            "unstable": self.unstable, "params": self.params, "errors": self.errors,
            "stats": self.stats}), indent=2, sort_keys=True)

    def write(self, out_dir) -> list:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / "report.json", out / "samples.csv", out / "timing.csv"]
        paths[0].write_text(self.to_json() + "\n")
        labels = list(self.samples)
        with paths[1].open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["run"] + labels)
            for i in range(len(self.rho)):
                w.writerow([i] + [repr(self.samples[k][i]) for k in labels])
        with paths[2].open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["scheme", "training_s", "offline_search_s", "optimization_ms"])
            for k in labels:
                t = (self.timing or {}).get(k)
                if t is None:
                    continue
                w.writerow([k, f"{np.mean(t['training']):.4g}",
                            f"{np.mean(t['offline_search']):.4g}",
                            f"{1e3 * np.nanmean(t['optimization']):.4g}"])
        return paths


def _jsonable(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return _jsonable(obj.item())
    return obj


def config_summary(cfg: BenchmarkConfig) -> dict:
    return {
        "plant": cfg.plant.to_dict(), "N_data": cfg.N_data, "T": cfg.T, "T_v": cfg.T_v,
        "n_runs": cfg.n_runs, "q_o": cfg.q_o, "r": cfg.r, "setup": cfg.setup,
        "schemes": [s.label for s in cfg.schemes], "base_seed": cfg.base_seed,
        "rho_max": cfg.rho_max,
        "grid_sizes": {k: len(v) for k, v in cfg.resolved_grids().items()},
    }


def run_benchmark(cfg: BenchmarkConfig, jobs: int = 1) -> BenchmarkReport:
    """Run all Monte-Carlo repetitions; ``jobs > 1`` parallelizes across runs."""
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            runs = list(ex.map(_run_one, [cfg] * cfg.n_runs, range(cfg.n_runs)))
    else:
        runs = [_run_one(cfg, i) for i in range(cfg.n_runs)]
    labels = [s.label for s in cfg.schemes]
    pick = lambda key: {k: [r["schemes"][k][key] for r in runs] for k in labels}
    samples = pick("J_a")
    timing = {k: {ph: [r["timing"][k][ph] for r in runs]
                  for ph in ("training", "offline_search", "optimization")} for k in labels}
    return BenchmarkReport(
        config=config_summary(cfg), samples=samples, unstable=pick("unstable"),
        params=pick("params"), errors=pick("error"), rho=[r["rho"] for r in runs],
        stats={k: summarize(v) for k, v in samples.items()}, timing=timing)


def with_setup(cfg: BenchmarkConfig, setup: int) -> BenchmarkConfig:
    return replace(cfg, setup=setup)
