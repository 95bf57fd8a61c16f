"""Config-driven experiment runner.

Builds the benchmark scenarios, runs Monte Carlo trajectory ensembles with
the per-step pipeline (certificate rows -> min-norm QP -> optional
saturation -> Euler-Maruyama step -> exit test h > 0), and aggregates
empirical safety probabilities, worst-case bounds, and control-effort
statistics into a SafetyReport.

Ensembles run in a worker pool (capped by SSK_THREADS); each trajectory
owns its noise substream and results are reduced in trajectory order, so
the degree of parallelism cannot change any output byte.
"""

from __future__ import annotations

import csv
import json
import math
import multiprocessing
import os
from dataclasses import asdict, dataclass, replace
from importlib import resources
from typing import Callable, Optional, Sequence

import jsonschema
import numpy as np

from . import bounds as bounds_mod
from . import fastpath
from .certificates import (
    CertificateSpec,
    ClassKFunction,
    DegenerateConstraintError,
    certificate_row,
    clf_row,
)
from .generator import BarrierChain, SmoothFunction
from .models import ACC_DEFAULTS, UNICYCLE_DEFAULTS, acc_bundle, unicycle_bundle
from .qp import QpProblem, QpSolution, saturate, solve
from .sde import (
    IntegrationOverflowError,
    NoiseStream,
    SdeModel,
    State,
    Trajectory,
    gaussian_increment_block,
    simulate,
)

__all__ = [
    "ScenarioConfig",
    "ConfigError",
    "SafetyReport",
    "QpStepController",
    "run_ensemble",
    "sweep_noise",
    "emit_trajectory_csv",
    "wilson_interval",
]

#: two-sided 95% normal quantile, frozen so reports are bit-stable
WILSON_Z = 1.959963984540054

_MODEL_DEFAULTS = {
    "acc": {
        "model_params": ACC_DEFAULTS,
        "T": 20.0,
        "dt": 0.0005,
        "operating_region": [[0.0, 40.0], [0.0, 40.0], [0.0, 300.0]],
        "certificate": {"family": "scbf"},
    },
    "unicycle": {
        "model_params": UNICYCLE_DEFAULTS,
        "T": 5.0,
        "dt": 0.0005,
        "operating_region": [[-3.0, 3.0], [-3.0, 3.0], [0.0, 2.0 * math.pi]],
        "certificate": {"family": "ho_scbf"},
    },
}

_CERT_DEFAULTS = {
    "gamma": 1.0,
    "alpha": {"kind": "linear", "k": 1.0},
    "alphas": [{"kind": "linear", "k": 1.0}, {"kind": "linear", "k": 1.0}],
    "ho_szcbf_uses_h1": False,
}


class ConfigError(ValueError):
    """Invalid or unknown scenario configuration."""


@dataclass(frozen=True)
class CustomModel:
    """A registered scenario: builder maps model_params to the pieces the
    per-step pipeline needs."""

    builder: "Callable[[dict], tuple]"  # -> (SdeModel, h, clf or None, chain_fn or None)
    defaults: dict


_CUSTOM_MODELS: dict[str, CustomModel] = {}


def register_model(
    name: str,
    builder,
    model_params: Optional[dict] = None,
    T: float = 5.0,
    dt: float = 0.0005,
    operating_region: Optional[list] = None,
    certificate: Optional[dict] = None,
) -> None:
    """Register a custom scenario usable as ``model`` in configs.

    ``builder(model_params)`` must return (SdeModel, h, clf_or_None,
    chain_builder_or_None) where chain_builder(region) -> BarrierChain is
    required only for the high-order certificate families.
    """
    if name in _MODEL_DEFAULTS or name in _CUSTOM_MODELS:
        raise ValueError(f"model name {name!r} already registered")
    defaults = {
        "model_params": dict(model_params or {}),
        "T": T,
        "dt": dt,
        "operating_region": operating_region or [[-1.0, 1.0]],
        "certificate": certificate or {"family": "scbf"},
    }
    _CUSTOM_MODELS[name] = CustomModel(builder, defaults)


def _load_schema() -> dict:
    with resources.files("ssk").joinpath("config_schema.json").open("r") as fh:
        return json.load(fh)


def _deep_merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], val)
        else:
            out[key] = val
    return out


@dataclass(frozen=True)
class ScenarioConfig:
    """Resolved experiment description (model, certificate, ensemble sizes)."""

    model: str
    model_params: dict
    certificate: dict
    T: float
    dt: float
    trajectories: int
    seed: int
    operating_region: list
    control_box: Optional[list] = None
    saturate_after: bool = False
    stop_on_exit: bool = True
    #: QP objective weight on u: a number, or "mg_scaled" to minimize the
    #: gravity-normalized control (u/(M g))^2 as the cruise benchmark plots it
    control_weight: object = None

    @classmethod
    def from_dict(cls, data: dict, apply_env: bool = True) -> "ScenarioConfig":
        """Validate against the shipped strict schema and fill defaults.

        SSK_SEED, when set, overrides the configured seed.
        """
        if not isinstance(data, dict):
            raise ConfigError(f"config must be an object, got {type(data).__name__}")
        model = data.get("model")
        schema = _load_schema()
        if model in _CUSTOM_MODELS:
            # custom builders own their parameter vocabulary
            schema = json.loads(json.dumps(schema))
            schema["properties"]["model_params"] = {"type": "object"}
        try:
            jsonschema.validate(data, schema)
        except jsonschema.ValidationError as exc:
            if exc.validator == "additionalProperties":
                known = exc.schema.get("properties", {})
                unknown = sorted(set(exc.instance) - set(known))
                raise ConfigError(f"unknown config keys: {unknown}") from exc
            path = ".".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(f"config key {path}: {exc.message}") from exc

        if model in _MODEL_DEFAULTS:
            defaults = _MODEL_DEFAULTS[model]
        elif model in _CUSTOM_MODELS:
            defaults = _CUSTOM_MODELS[model].defaults
        else:
            known = sorted([*_MODEL_DEFAULTS, *_CUSTOM_MODELS])
            raise ConfigError(f"unknown model {model!r}; registered models: {known}")
        merged = {
            "model": model,
            "model_params": _deep_merge(defaults["model_params"], data.get("model_params", {})),
            "certificate": _deep_merge(
                _CERT_DEFAULTS, _deep_merge(defaults["certificate"], data.get("certificate", {}))
            ),
            "T": data.get("T", defaults["T"]),
            "dt": data.get("dt", defaults["dt"]),
            "trajectories": data.get("trajectories", 200),
            "seed": data.get("seed", 12345),
            "operating_region": data.get("operating_region", defaults["operating_region"]),
            "control_box": data.get("control_box"),
            "saturate_after": data.get("saturate_after", False),
            "stop_on_exit": data.get("stop_on_exit", True),
            "control_weight": data.get(
                "control_weight", "mg_scaled" if model == "acc" else 1.0
            ),
        }
        if apply_env and os.environ.get("SSK_SEED"):
            merged["seed"] = int(os.environ["SSK_SEED"])
        cfg = cls(**merged)
        cfg._check()
        return cfg

    def _check(self) -> None:
        if self.trajectories < 1:
            raise ConfigError(f"trajectories must be positive, got {self.trajectories}")
        if not (0.0 < self.dt <= self.T):
            raise ConfigError(f"need 0 < dt <= T, got dt={self.dt}, T={self.T}")
        if "x0" not in self.model_params:
            raise ConfigError("model_params must provide the initial state x0")
        params = self.model_params
        for key, val in params.items():
            if isinstance(val, (int, float)) and not math.isfinite(val):
                raise ConfigError(f"model_params.{key} is not finite")
        for key in ("sigma1", "sigma2"):
            if params.get(key, 0.0) < 0.0:
                raise ConfigError(f"model_params.{key} must be nonnegative")
        if self.certificate.get("family") not in ("srcbf", "szcbf", "scbf", "ho_scbf", "ho_szcbf"):
            raise ConfigError(f"unknown certificate family {self.certificate.get('family')!r}")
        cw = self.control_weight
        if cw is not None and cw != "mg_scaled":
            if not isinstance(cw, (int, float)) or cw <= 0:
                raise ConfigError(f"control_weight must be positive or 'mg_scaled', got {cw!r}")

    def resolved_control_weight(self) -> float:
        if self.control_weight == "mg_scaled":
            M = float(self.model_params.get("M", 1.0))
            grav = float(self.model_params.get("gravity", 9.81))
            return 1.0 / (M * grav) ** 2
        if self.control_weight is None:
            return 1.0
        return float(self.control_weight)

    def to_dict(self) -> dict:
        return asdict(self)


def wilson_interval(successes: int, n: int, z: float = WILSON_Z) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if n <= 0:
        raise ValueError(f"sample size must be positive, got {n}")
    if not 0 <= successes <= n:
        raise ValueError(f"successes {successes} outside [0, {n}]")
    phat = successes / n
    z2 = z * z
    denom = 1.0 + z2 / n
    center = (phat + z2 / (2.0 * n)) / denom
    half = z * math.sqrt(phat * (1.0 - phat) / n + z2 / (4.0 * n * n)) / denom
    return (max(0.0, center - half), min(1.0, center + half))


@dataclass
class SafetyReport:
    """Ensemble outcome: empirical safety vs the worst-case bound.

    Effort statistics are squared control magnitudes: per-trajectory peak
    maximized across the ensemble and per-trajectory time averages averaged
    across the ensemble.  Trajectories killed by numerical overflow count
    as unsafe (and in overflow_count) with their effort excluded.
    """

    trajectories: int
    safe_count: int
    empirical_probability: float
    wilson_interval_95: tuple[float, float]
    theoretical_bound: Optional[bounds_mod.BoundReport]
    exit_time_quantiles: dict
    effort_peak: float
    effort_mean: float
    infeasible_step_count: int
    degenerate_row_count: int
    overflow_count: int = 0
    level_safe_fractions: Optional[list] = None

    def to_dict(self) -> dict:
        out = asdict(self)
        if self.theoretical_bound is not None:
            out["theoretical_bound"] = asdict(self.theoretical_bound)
        out["wilson_interval_95"] = list(self.wilson_interval_95)
        return out


class QpStepController:
    """Per-state control law: certificate (+ performance) rows into a QP.

    Degenerate certificate rows are dropped for the step and counted.
    When the QP is infeasible the control falls back to the least-squares
    point of the certificate rows treated as equalities, saturated into the
    box; the step is counted and the trajectory continues.
    """

    def __init__(
        self,
        model: SdeModel,
        spec: CertificateSpec,
        clf: Optional[SmoothFunction] = None,
        control_box: Optional[Sequence] = None,
        saturate_after: bool = False,
        weight_u: float = 1.0,
    ):
        self.model = model
        self.spec = spec
        self.clf = clf
        self.box = [tuple(b) for b in control_box] if control_box is not None else None
        self.saturate_after = saturate_after
        self.weight_u = weight_u
        self.infeasible_steps = 0
        self.degenerate_rows = 0
        self.last_solution: Optional[QpSolution] = None
        # reused problem shell; only .rows changes step to step
        self._problem = QpProblem(
            num_controls=model.control_dim,
            rows=[],
            slack_present=clf is not None,
            weight_u=weight_u,
            box=None if (self.box is None or saturate_after) else self.box,
        )

    def __call__(self, state: State) -> np.ndarray:
        rows = []
        cert_rows = []
        dropped = False
        try:
            row = certificate_row(self.model, self.spec, state)
            if row is not None:
                rows.append(row)
                cert_rows.append(row)
        except DegenerateConstraintError:
            self.degenerate_rows += 1
            dropped = True
        if self.clf is not None:
            rows.append(clf_row(self.model, self.clf, state))
        problem = self._problem
        problem.rows = rows
        sol = solve(problem)
        if sol.status == "infeasible":
            self.infeasible_steps += 1
            u = self._fallback(cert_rows)
        else:
            if dropped:
                sol = replace(sol, status="degenerate_row_dropped")
            u = sol.u
        if self.box is not None and (self.saturate_after or sol.status == "infeasible"):
            u = saturate(u, self.box)
        self.last_solution = sol
        return u

    def _fallback(self, cert_rows) -> np.ndarray:
        if not cert_rows:
            return np.zeros(self.model.control_dim)
        if len(cert_rows) == 1:
            # min-norm point of the single row as an equality
            c = cert_rows[0].coeffs.tolist()
            rhs = cert_rows[0].rhs
            nrm = 0.0
            for v in c:
                nrm += v * v
            if nrm == 0.0:
                return np.zeros(self.model.control_dim)
            return np.array([(v * rhs) / nrm for v in c])
        C = np.stack([r.coeffs for r in cert_rows])
        d = np.array([r.rhs for r in cert_rows])
        u, *_ = np.linalg.lstsq(C, d, rcond=None)
        return u


@dataclass(frozen=True)
class _Runtime:
    """Per-worker scenario pieces built once from the resolved config."""

    config: ScenarioConfig
    model: SdeModel
    h: SmoothFunction
    clf: Optional[SmoothFunction]
    spec: CertificateSpec
    chain: Optional[BarrierChain]
    fast: Optional["fastpath.AccFastParams"] = None


def _build_runtime(config: ScenarioConfig) -> _Runtime:
    cert = config.certificate
    family = cert["family"]
    if config.model == "acc":
        bundle = acc_bundle(config.model_params)
        model, h, clf = bundle.model, bundle.h, bundle.V
        chain = None
    elif config.model == "unicycle":
        bundle = unicycle_bundle(config.model_params)
        model, h = bundle.model, bundle.h
        clf = None  # certificate-only program for the disk benchmark
        chain = bundle.chain(region=config.operating_region) if family.startswith("ho_") else None
    else:
        model, h, clf, chain_fn = _CUSTOM_MODELS[config.model].builder(config.model_params)
        chain = None
        if family.startswith("ho_"):
            if chain_fn is None:
                raise ConfigError(
                    f"model {config.model!r} provides no barrier chain; "
                    f"high-order certificates are unavailable"
                )
            chain = chain_fn(config.operating_region)

    alpha = ClassKFunction(**cert["alpha"])
    alphas_pair = tuple(ClassKFunction(**a) for a in cert["alphas"])
    if family == "srcbf":
        spec = CertificateSpec(family, h, gamma=cert["gamma"])
    elif family == "szcbf":
        spec = CertificateSpec(family, h, alphas=(alpha,))
    elif family == "scbf":
        spec = CertificateSpec(family, h)
    elif family == "ho_scbf":
        spec = CertificateSpec(family, h, chain=chain)
    else:
        spec = CertificateSpec(
            family,
            h,
            chain=chain,
            alphas=alphas_pair,
            ho_szcbf_uses_h1=cert["ho_szcbf_uses_h1"],
        )
    fast = fastpath.acc_fast_params(config, spec) if config.model == "acc" else None
    return _Runtime(config, model, h, clf, spec, chain, fast)


@dataclass(frozen=True)
class _TrajSummary:
    safe: bool
    exit_time: Optional[float]
    effort_peak: float
    effort_mean: float
    infeasible: int
    degenerate: int
    overflow: bool
    level_safe: Optional[tuple[bool, ...]]


_RUNTIME: Optional[_Runtime] = None


def _init_worker(config_dict: dict) -> None:
    global _RUNTIME
    _RUNTIME = _build_runtime(ScenarioConfig(**config_dict))


def _run_task(task: tuple[int, Optional[list]]) -> _TrajSummary:
    stream_id, x0_override = task
    rt = _RUNTIME
    cfg = rt.config
    x0 = np.asarray(x0_override if x0_override is not None else cfg.model_params["x0"], float)
    if rt.fast is not None:
        n_steps = int(round(cfg.T / cfg.dt))
        dws = gaussian_increment_block(
            NoiseStream(seed=cfg.seed, stream_id=stream_id),
            rt.model.noise_dim,
            cfg.dt,
            n_steps,
        )
        safe, exit_time, peak, mean, infeasible, overflow = fastpath.run_acc_trajectory(
            rt.fast, x0, n_steps, cfg.dt, dws
        )
        return _TrajSummary(
            safe=safe,
            exit_time=exit_time,
            effort_peak=peak,
            effort_mean=mean,
            infeasible=infeasible,
            degenerate=0,
            overflow=overflow,
            level_safe=None,
        )
    controller = QpStepController(
        rt.model,
        rt.spec,
        clf=rt.clf,
        control_box=cfg.control_box,
        saturate_after=cfg.saturate_after,
        weight_u=cfg.resolved_control_weight(),
    )
    h_val = rt.h.value
    stream = NoiseStream(seed=cfg.seed, stream_id=stream_id)
    try:
        traj = simulate(
            rt.model,
            controller,
            State(x0),
            cfg.T,
            cfg.dt,
            stream,
            stop_on_exit=cfg.stop_on_exit,
            exit_test=lambda s: h_val(s.values) > 0.0,
        )
    except IntegrationOverflowError as exc:
        return _TrajSummary(
            safe=False,
            exit_time=exc.state.time,
            effort_peak=0.0,
            effort_mean=0.0,
            infeasible=controller.infeasible_steps,
            degenerate=controller.degenerate_rows,
            overflow=True,
            level_safe=None,
        )
    if traj.controls:
        efforts = [float(u @ u) for u in traj.controls]
        peak = max(efforts)
        mean = sum(efforts) / len(efforts)
    else:
        peak = mean = 0.0
    level_safe = None
    if rt.chain is not None:
        flags = [traj.safe]
        for lvl in rt.chain.levels[1:]:
            flags.append(all(lvl.value(s.values) > 0.0 for s in traj.states))
        level_safe = tuple(flags)
    return _TrajSummary(
        safe=traj.safe,
        exit_time=traj.exit_time,
        effort_peak=peak,
        effort_mean=mean,
        infeasible=controller.infeasible_steps,
        degenerate=controller.degenerate_rows,
        overflow=False,
        level_safe=level_safe,
    )


def _worker_count(n_tasks: int) -> int:
    cap = os.environ.get("SSK_THREADS")
    workers = int(cap) if cap else (os.cpu_count() or 1)
    return max(1, min(workers, n_tasks))


def _run_tasks(config: ScenarioConfig, tasks: list[tuple[int, Optional[list]]]) -> list[_TrajSummary]:
    workers = _worker_count(len(tasks))
    config_dict = config.to_dict()
    if workers == 1:
        _init_worker(config_dict)
        return [_run_task(t) for t in tasks]
    ctx = multiprocessing.get_context("fork")
    chunk = max(1, len(tasks) // (workers * 8))
    with ctx.Pool(workers, initializer=_init_worker, initargs=(config_dict,)) as pool:
        return pool.map(_run_task, tasks, chunksize=chunk)


def _theoretical_bound(rt: _Runtime, xi: np.ndarray) -> bounds_mod.BoundReport:
    cfg = rt.config
    family = rt.spec.family
    region = cfg.operating_region
    h_xi = float(rt.h.value(xi))
    if family == "srcbf":
        return bounds_mod.BoundReport(
            family,
            1.0,
            None,
            {"h_xi": h_xi, "note": "pathwise almost-sure invariance under the reciprocal strategy"},
        )
    if family in ("szcbf", "scbf"):
        sup = bounds_mod.estimate_sup(rt.h, region)
        c = max(sup.value, h_xi)
        if family == "szcbf":
            val = bounds_mod.szcbf_bound(max(h_xi, 0.0), c, cfg.T)
            return bounds_mod.BoundReport(
                family, val, cfg.T, {"h_xi": h_xi, "c": c, "T": cfg.T, "region": region}
            )
        val = bounds_mod.scbf_bound(max(h_xi, 0.0), c)
        return bounds_mod.BoundReport(family, val, None, {"h_xi": h_xi, "c": c, "region": region})
    if family == "ho_scbf":
        values = [float(lvl.value(xi)) for lvl in rt.chain.levels]
        sups = []
        for lvl, bj in zip(rt.chain.levels, values):
            est = bounds_mod.estimate_sup(lvl, region)
            sups.append(max(est.value, bj))
        inputs = {"b_xi": values, "c": sups, "region": region}
        try:
            val = bounds_mod.ho_scbf_bound(values, sups)
        except bounds_mod.HypothesisViolationError as exc:
            inputs["hypothesis_violated_level"] = exc.level
            val = 0.0
        return bounds_mod.BoundReport(family, val, None, inputs)
    return bounds_mod.BoundReport(
        family, 0.0, None, {"note": "no closed-form bound for this construction"}
    )


def _aggregate(
    config: ScenarioConfig,
    summaries: list[_TrajSummary],
    bound: Optional[bounds_mod.BoundReport],
) -> SafetyReport:
    n = len(summaries)
    safe_count = sum(1 for s in summaries if s.safe)
    exits = [s.exit_time for s in summaries if s.exit_time is not None]
    quantiles = {}
    if exits:
        qs = np.quantile(np.array(exits), [0.1, 0.25, 0.5, 0.75, 0.9])
        quantiles = {f"q{int(q * 100)}": float(v) for q, v in zip([0.1, 0.25, 0.5, 0.75, 0.9], qs)}
    level_fracs = None
    with_levels = [s for s in summaries if s.level_safe is not None]
    if with_levels:
        depth = len(with_levels[0].level_safe)
        level_fracs = [
            sum(1 for s in with_levels if s.level_safe[j]) / len(with_levels)
            for j in range(depth)
        ]
    return SafetyReport(
        trajectories=n,
        safe_count=safe_count,
        empirical_probability=safe_count / n,
        wilson_interval_95=wilson_interval(safe_count, n),
        theoretical_bound=bound,
        exit_time_quantiles=quantiles,
        effort_peak=max((s.effort_peak for s in summaries), default=0.0),
        effort_mean=sum(s.effort_mean for s in summaries) / n,
        infeasible_step_count=sum(s.infeasible for s in summaries),
        degenerate_row_count=sum(s.degenerate for s in summaries),
        overflow_count=sum(1 for s in summaries if s.overflow),
        level_safe_fractions=level_fracs,
    )


def run_ensemble(config: ScenarioConfig) -> SafetyReport:
    """Simulate the configured ensemble and aggregate a SafetyReport.

    Trajectory i uses noise substream stream_id=i, so the report is a pure
    function of the config.
    """
    rt = _build_runtime(config)  # fail fast on bad scenarios, build bound locally
    tasks = [(i, None) for i in range(config.trajectories)]
    summaries = _run_tasks(config, tasks)
    bound = _theoretical_bound(rt, np.asarray(config.model_params["x0"], dtype=float))
    return _aggregate(config, summaries, bound)


def _sample_disk_states(
    rng: np.random.Generator, count: int, radius: float
) -> list[list[float]]:
    """Area-uniform positions in the disk, headings uniform on [0, 2*pi)."""
    rad = radius * np.sqrt(rng.uniform(size=count))
    pos_angle = rng.uniform(0.0, 2.0 * math.pi, size=count)
    heading = rng.uniform(0.0, 2.0 * math.pi, size=count)
    return [
        [float(r * math.cos(a)), float(r * math.sin(a)), float(t)]
        for r, a, t in zip(rad, pos_angle, heading)
    ]


def sweep_noise(
    config: ScenarioConfig,
    sigma_list: Sequence[float],
    init_sampling: str = "uniform-in-disk",
    paths_per_point: int = 1,
    families: Sequence[str] = ("ho_scbf", "ho_szcbf"),
) -> list[dict]:
    """Safety probability versus noise level for competing certificates.

    For each sigma, fresh initial points are sampled (area-uniform in the
    disk, heading uniform) and both families are run on the same points and
    noise substreams, giving a matched-pairs comparison.  With
    paths_per_point == 1 one row per (sigma, family) aggregates all points;
    with more paths per point, rows are emitted per initial point.
    """
    if init_sampling not in ("fixed", "uniform-in-disk"):
        raise ConfigError(f"unknown init_sampling {init_sampling!r}")
    if config.model != "unicycle":
        raise ConfigError("noise sweeps are defined for the disk benchmark")
    if any(s < 0.0 for s in sigma_list):
        raise ConfigError("sigma values must be nonnegative")

    rows: list[dict] = []
    n_points = config.trajectories
    radius = float(config.model_params["r"])
    for sigma_idx, sigma in enumerate(sigma_list):
        rng = np.random.default_rng([config.seed, 1013, sigma_idx])
        if init_sampling == "uniform-in-disk":
            points = _sample_disk_states(rng, n_points, radius)
        else:
            points = [list(config.model_params["x0"])] * n_points
        tasks = []
        for pt_idx, pt in enumerate(points):
            for rep in range(paths_per_point):
                stream_id = (sigma_idx << 32) | (pt_idx * paths_per_point + rep)
                tasks.append((stream_id, pt))
        for family in families:
            fam_cfg = replace(
                config,
                model_params={**config.model_params, "sigma1": sigma, "sigma2": sigma},
                certificate={**config.certificate, "family": family},
            )
            summaries = _run_tasks(fam_cfg, tasks)
            if paths_per_point == 1:
                safe = sum(1 for s in summaries if s.safe)
                lo, hi = wilson_interval(safe, len(summaries))
                rows.append(
                    {"sigma": sigma, "family": family, "p": safe / len(summaries), "lo": lo, "hi": hi}
                )
            else:
                for pt_idx in range(n_points):
                    block = summaries[pt_idx * paths_per_point : (pt_idx + 1) * paths_per_point]
                    safe = sum(1 for s in block if s.safe)
                    lo, hi = wilson_interval(safe, len(block))
                    rows.append(
                        {
                            "sigma": sigma,
                            "family": family,
                            "p": safe / len(block),
                            "lo": lo,
                            "hi": hi,
                            "point": pt_idx,
                        }
                    )
    return rows


def emit_trajectory_csv(
    traj: Trajectory, path, h: Optional[Callable[[np.ndarray], float]] = None
) -> None:
    """Write one trajectory as CSV: t, states, controls, h, J = |u|^2.

    Floats are printed with 17 significant digits so a round-trip parse is
    bit-exact.  The final state row leaves the control and effort columns
    empty (there is one fewer control than states).
    """
    n = traj.states[0].values.size
    p = traj.controls[0].size if traj.controls else 1

    def fmt(v) -> str:
        return format(float(v), ".17g")

    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["t"]
                + [f"x_{i}" for i in range(n)]
                + [f"u_{i}" for i in range(p)]
                + ["h", "J"]
            )
            for i, state in enumerate(traj.states):
                row = [fmt(state.time)] + [fmt(v) for v in state.values]
                if i < len(traj.controls):
                    u = traj.controls[i]
                    row += [fmt(v) for v in u]
                    row.append(fmt(h(state.values)) if h else "")
                    row.append(fmt(float(u @ u)))
                else:
                    row += [""] * p
                    row.append(fmt(h(state.values)) if h else "")
                    row.append("")
                writer.writerow(row)
    except OSError as exc:
        raise OSError(f"cannot write trajectory CSV to {path}: {exc}") from exc
