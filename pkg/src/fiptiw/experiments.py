"""Monte Carlo studies over the simulation engine.

Three studies, each a grid of scenarios replicated many times:

1. censoring sensitivity: end-of-follow-up times depend on covariates
   through a proportional hazard, and the estimators (unweighted, IIW,
   IPTW, FIPTIW, FIPTICW) are compared as that dependence strengthens;
2. intensity-model variable inclusion: stabilized IIW fitted with every
   covariate subset of the observation-intensity model;
3. weight trimming: percentile-capping the weights at every percentile
   from 0.50 to 1.00, either per factor before multiplying or on the
   product, under varying treatment/observation informativeness.

Replications run on deterministic per-replication RNG streams so that a
worker pool of any size reproduces identical results. Aggregation reports
bias, variance, MSE, and relative bias of the estimated treatment effect
against the generating truth of 0.5, plus weight-extremity shares.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import partial

import numpy as np

from .errors import (
    ConfigError,
    ConvergenceError,
    DataError,
    PositivityError,
    RankError,
    SeparationError,
)
from .gee import OutcomeSpec, solve_gee
from .panel import Panel
from .simgen import (
    DgpSpec,
    HazardCensoring,
    LogisticTreatment,
    RandomizedTreatment,
    RngStream,
    UniformCensoring,
    gen_panel,
)
from .survival import PhSpec, build_risk_design, fit_censoring, fit_ph_design
from .weights import WeightSet, combine, fit_propensity, iiw_weights, ipcw_weights, iptw_weights

__all__ = [
    "TRIM_GRID",
    "TRUTH",
    "ScenarioSpec",
    "Estimate",
    "Failure",
    "WeightExtremity",
    "ReplicationResult",
    "MetricsRow",
    "MetricsTable",
    "ExtremitySummaryRow",
    "sim1_grid",
    "sim2_grid",
    "sim3_grid",
    "validate_scenario",
    "replicate_scenario",
    "run_scenarios",
    "run_sim1",
    "run_sim2",
    "run_sim3",
    "aggregate",
    "extremity_summary",
    "emit_plot_data",
    "write_replications_csv",
    "write_metrics_csv",
    "write_extremity_csv",
]

TRUTH = 0.5  # generating value of the treatment effect in every study
TRIM_GRID = tuple(round(0.50 + k * 0.01, 2) for k in range(51))

# study 1: censoring-hazard coefficient grid (treatment effect held at 0.4)
_CENSORING_TREATMENT_COEF = 0.4
_CENSORING_W_GRID = (0.0, 0.2, 0.5)
_CENSORING_Z_GRID = (0.0, 0.4, 0.6)

# study 2: coefficient grid for the time-trend covariate G
_G_INTENSITY_GRID = (0.0, 0.3)
_G_OUTCOME_GRID = (0.0, 2.0)
_SUBSETS = (
    ("D",),
    ("G",),
    ("Z",),
    ("D", "G"),
    ("D", "Z"),
    ("G", "Z"),
    ("D", "G", "Z"),
)

# study 3: informativeness levels for the two processes; level pairs where
# fitted propensities hit 0 or 1 are excluded from the supported grid
_TREATMENT_SLOPES = {"low": 0.5, "moderate": 3.5, "high": 5.5}
_OBSERVATION_Z_COEFS = {"low": 0.6, "moderate": -0.75, "high": -1.1}
_RETAINED_PAIRS = (
    ("low", "low"),
    ("moderate", "low"),
    ("high", "low"),
    ("low", "moderate"),
    ("low", "high"),
    ("moderate", "moderate"),
)

_SUPPORTED_N = (50, 100, 500)

# outcome model shared by every study: known time trend as offset, one
# treatment column, no free intercept
_MARGINAL_MODEL = OutcomeSpec("identity", covariates=("D",), offset="offset")

# fitting problems that count as replication-level failures rather than bugs
_STATISTICAL_FAILURES = (ConvergenceError, SeparationError, PositivityError, RankError, DataError)


# ------------------------------------------------------------------ scenarios


@dataclass(frozen=True)
class ScenarioSpec:
    """One grid point of one study.

    ``seed`` and ``scenario_index`` key the replication RNG streams: stream
    (study, scenario_index, replication) under the master seed. Two
    scenarios sharing all three must be the same scenario.
    """

    study: int
    n: int = 100
    replications: int = 1000
    seed: int = 0
    scenario_index: int = 0
    censoring_effects: tuple[float, float, float] | None = None  # study 1
    g_intensity_coef: float | None = None  # study 2
    g_outcome_coef: float | None = None  # study 2
    treatment_level: str | None = None  # study 3
    observation_level: str | None = None  # study 3

    def __post_init__(self) -> None:
        if self.study not in (1, 2, 3):
            raise ConfigError(f"unknown study {self.study!r}")
        if self.n < 2:
            raise ConfigError("scenario needs n >= 2")
        if self.replications < 1:
            raise ConfigError("scenario needs at least one replication")
        if self.scenario_index < 0:
            raise ConfigError("scenario_index must be nonnegative")
        used = {
            1: ("censoring_effects",),
            2: ("g_intensity_coef", "g_outcome_coef"),
            3: ("treatment_level", "observation_level"),
        }[self.study]
        all_knobs = (
            "censoring_effects",
            "g_intensity_coef",
            "g_outcome_coef",
            "treatment_level",
            "observation_level",
        )
        for name in all_knobs:
            value = getattr(self, name)
            if name in used and value is None:
                raise ConfigError(f"study {self.study} scenario needs {name}")
            if name not in used and value is not None:
                raise ConfigError(f"{name} does not apply to study {self.study}")
        if self.study == 1:
            eff = tuple(float(v) for v in self.censoring_effects)
            if len(eff) != 3 or not all(math.isfinite(v) for v in eff):
                raise ConfigError("censoring_effects must be 3 finite numbers")
            object.__setattr__(self, "censoring_effects", eff)
        if self.study == 2:
            for name in ("g_intensity_coef", "g_outcome_coef"):
                if not math.isfinite(getattr(self, name)):
                    raise ConfigError(f"{name} must be finite")
        if self.study == 3:
            for name in ("treatment_level", "observation_level"):
                if getattr(self, name) not in _TREATMENT_SLOPES:
                    raise ConfigError(
                        f"{name} must be one of {sorted(_TREATMENT_SLOPES)}, "
                        f"got {getattr(self, name)!r}"
                    )

    @property
    def scenario_id(self) -> str:
        if self.study == 1:
            a, b, c = self.censoring_effects
            return f"censoring-d{a:g}-w{b:g}-z{c:g}"
        if self.study == 2:
            return f"inclusion-gint{self.g_intensity_coef:g}-gout{self.g_outcome_coef:g}"
        return f"trimming-{self.treatment_level}-{self.observation_level}"


def validate_scenario(spec: ScenarioSpec, *, allow_custom: bool = False) -> None:
    """Reject scenarios off the supported grids unless explicitly allowed.

    Structural validity is already enforced by the type; this checks grid
    membership (coefficient values, informativeness pairs, sample sizes).
    """
    if allow_custom:
        return
    if spec.study == 1:
        a, b, c = spec.censoring_effects
        if (
            a != _CENSORING_TREATMENT_COEF
            or b not in _CENSORING_W_GRID
            or c not in _CENSORING_Z_GRID
        ):
            raise ConfigError(
                f"censoring effects {spec.censoring_effects} are off the supported "
                "grid; pass allow_custom to run them anyway"
            )
        if spec.n not in _SUPPORTED_N:
            raise ConfigError(f"study 1 supports n in {_SUPPORTED_N}")
    elif spec.study == 2:
        if spec.g_intensity_coef not in _G_INTENSITY_GRID or spec.g_outcome_coef not in _G_OUTCOME_GRID:
            raise ConfigError(
                "G coefficients are off the supported grid; pass allow_custom "
                "to run them anyway"
            )
        if spec.n not in _SUPPORTED_N:
            raise ConfigError(f"study 2 supports n in {_SUPPORTED_N}")
    else:
        pair = (spec.treatment_level, spec.observation_level)
        if pair not in _RETAINED_PAIRS:
            raise ConfigError(
                f"informativeness pair {pair} is excluded (propensities degenerate); "
                "pass allow_custom to run it anyway"
            )
        if spec.n != 100:
            raise ConfigError("study 3 runs at n = 100; pass allow_custom to change")


def sim1_grid(n: int = 100, replications: int = 1000, seed: int = 0) -> tuple[ScenarioSpec, ...]:
    """All nine censoring-effect scenarios of study 1."""
    specs = []
    for b in _CENSORING_W_GRID:
        for c in _CENSORING_Z_GRID:
            specs.append(
                ScenarioSpec(
                    study=1,
                    n=n,
                    replications=replications,
                    seed=seed,
                    scenario_index=len(specs),
                    censoring_effects=(_CENSORING_TREATMENT_COEF, b, c),
                )
            )
    return tuple(specs)


def sim2_grid(n: int = 100, replications: int = 1000, seed: int = 0) -> tuple[ScenarioSpec, ...]:
    """The four (intensity, outcome) coefficient scenarios of study 2."""
    specs = []
    for gi in _G_INTENSITY_GRID:
        for go in _G_OUTCOME_GRID:
            specs.append(
                ScenarioSpec(
                    study=2,
                    n=n,
                    replications=replications,
                    seed=seed,
                    scenario_index=len(specs),
                    g_intensity_coef=gi,
                    g_outcome_coef=go,
                )
            )
    return tuple(specs)


def sim3_grid(n: int = 100, replications: int = 1000, seed: int = 0) -> tuple[ScenarioSpec, ...]:
    """The six retained informativeness pairs of study 3."""
    return tuple(
        ScenarioSpec(
            study=3,
            n=n,
            replications=replications,
            seed=seed,
            scenario_index=k,
            treatment_level=t,
            observation_level=o,
        )
        for k, (t, o) in enumerate(_RETAINED_PAIRS)
    )


# ------------------------------------------------------------------- results


@dataclass(frozen=True)
class Estimate:
    method: str
    value: float
    stage: str = ""  # "", "before", or "after" for trimmed estimates
    trim_p: float | None = None


@dataclass(frozen=True)
class Failure:
    method: str
    reason: str
    stage: str = ""
    trim_p: float | None = None


@dataclass(frozen=True)
class WeightExtremity:
    """Share of weights above fixed cutoffs, in percent, plus the maximum."""

    kind: str
    max_weight: float
    pct_over_5: float
    pct_over_10: float
    pct_over_20: float


@dataclass(frozen=True)
class ReplicationResult:
    scenario: str
    replication: int
    estimates: tuple[Estimate, ...]
    failures: tuple[Failure, ...] = ()
    weight_extremity: tuple[WeightExtremity, ...] = ()

    def estimate(self, method: str, stage: str = "", trim_p: float | None = None) -> float:
        for e in self.estimates:
            if e.method == method and e.stage == stage and e.trim_p == trim_p:
                return e.value
        raise KeyError(f"no estimate for {(method, stage, trim_p)}")


@dataclass(frozen=True)
class MetricsRow:
    scenario: str
    method: str
    stage: str
    trim_p: float | None
    n_used: int
    n_failed: int
    bias: float | None
    variance: float | None  # None when fewer than 2 usable replications
    mse: float | None
    mse_decomposed: float | None  # bias^2 + (R-1)/R * variance
    relative_bias: float | None


@dataclass(frozen=True)
class MetricsTable:
    rows: tuple[MetricsRow, ...]
    truth: float = TRUTH

    def row(self, scenario: str, method: str, stage: str = "", trim_p: float | None = None) -> MetricsRow:
        for r in self.rows:
            if (r.scenario, r.method, r.stage, r.trim_p) == (scenario, method, stage, trim_p):
                return r
        raise KeyError(f"no metrics row for {(scenario, method, stage, trim_p)}")


@dataclass(frozen=True)
class ExtremitySummaryRow:
    """Per-replication extremity shares averaged over a scenario's runs."""

    scenario: str
    kind: str
    replications: int
    mean_max_weight: float
    mean_pct_over_5: float
    mean_pct_over_10: float
    mean_pct_over_20: float


def aggregate(results, truth: float = TRUTH) -> MetricsTable:
    """Bias, variance, MSE, and relative bias per (scenario, method) cell.

    Failed replications are excluded from every average and reported as
    counts. Cells where every replication failed keep their failure count
    and carry no metrics.
    """
    results = tuple(results)
    if not results:
        raise DataError("no replication results to aggregate")
    values: dict[tuple, list[float]] = {}
    failed: dict[tuple, int] = {}
    order: list[tuple] = []
    for res in results:
        for e in res.estimates:
            key = (res.scenario, e.method, e.stage, e.trim_p)
            if key not in values and key not in failed:
                order.append(key)
            values.setdefault(key, []).append(e.value)
        for f in res.failures:
            key = (res.scenario, f.method, f.stage, f.trim_p)
            if key not in values and key not in failed:
                order.append(key)
            failed[key] = failed.get(key, 0) + 1
    if not values:
        raise DataError("every replication failed; nothing to aggregate")

    rows = []
    for key in order:
        scenario, method, stage, trim_p = key
        est = np.asarray(values.get(key, ()), dtype=float)
        n_used = est.size
        n_failed = failed.get(key, 0)
        if n_used == 0:
            rows.append(
                MetricsRow(scenario, method, stage, trim_p, 0, n_failed, None, None, None, None, None)
            )
            continue
        bias = float(est.mean() - truth)
        mse = float(np.mean((est - truth) ** 2))
        if n_used >= 2:
            variance = float(est.var(ddof=1))
            mse_decomposed = bias**2 + variance * (n_used - 1) / n_used
        else:
            variance = None
            mse_decomposed = mse
        relative_bias = bias / truth if truth != 0 else None
        rows.append(
            MetricsRow(
                scenario, method, stage, trim_p,
                n_used, n_failed, bias, variance, mse, mse_decomposed, relative_bias,
            )
        )
    return MetricsTable(rows=tuple(rows), truth=truth)


def extremity_summary(results) -> tuple[ExtremitySummaryRow, ...]:
    """Average the per-replication extremity records per (scenario, kind)."""
    groups: dict[tuple[str, str], list[WeightExtremity]] = {}
    order: list[tuple[str, str]] = []
    for res in results:
        for ext in res.weight_extremity:
            key = (res.scenario, ext.kind)
            if key not in groups:
                order.append(key)
            groups.setdefault(key, []).append(ext)
    rows = []
    for key in order:
        recs = groups[key]
        rows.append(
            ExtremitySummaryRow(
                scenario=key[0],
                kind=key[1],
                replications=len(recs),
                mean_max_weight=float(np.mean([r.max_weight for r in recs])),
                mean_pct_over_5=float(np.mean([r.pct_over_5 for r in recs])),
                mean_pct_over_10=float(np.mean([r.pct_over_10 for r in recs])),
                mean_pct_over_20=float(np.mean([r.pct_over_20 for r in recs])),
            )
        )
    return tuple(rows)


# ------------------------------------------------------- replication pipelines


def _sim1_dgp(spec: ScenarioSpec) -> DgpSpec:
    return DgpSpec(
        n=spec.n,
        treatment=LogisticTreatment(intercept=-1.0, slope=1.0),
        censoring=HazardCensoring(spec.censoring_effects),
        intensity_effects=(0.5, 0.3, 0.6),
    )


def _sim2_dgp(spec: ScenarioSpec) -> DgpSpec:
    return DgpSpec(
        n=spec.n,
        treatment=RandomizedTreatment(0.5),
        censoring=UniformCensoring(),
        intensity_effects=(0.5, spec.g_intensity_coef, 0.6),
        outcome_effects=(0.5, spec.g_outcome_coef, 1.0),
    )


def _sim3_dgp(spec: ScenarioSpec) -> DgpSpec:
    return DgpSpec(
        n=spec.n,
        treatment=LogisticTreatment(intercept=0.0, slope=_TREATMENT_SLOPES[spec.treatment_level]),
        censoring=UniformCensoring(),
        intensity_effects=(0.5, 0.3, _OBSERVATION_Z_COEFS[spec.observation_level]),
    )


def _try(fn):
    """Run a fitting step; return (value, None) or (None, reason)."""
    try:
        return fn(), None
    except _STATISTICAL_FAILURES as exc:
        return None, f"{type(exc).__name__}: {exc}"


def _gee_effect(panel: Panel, ws: WeightSet | None = None) -> float:
    return float(solve_gee(panel, _MARGINAL_MODEL, weights=ws).coef("D"))


def _weight_extremity(ws: WeightSet) -> WeightExtremity:
    v = ws.values
    return WeightExtremity(
        kind=ws.kind,
        max_weight=float(v.max()),
        pct_over_5=float(100.0 * np.mean(v > 5.0)),
        pct_over_10=float(100.0 * np.mean(v > 10.0)),
        pct_over_20=float(100.0 * np.mean(v > 20.0)),
    )


def _stabilized_iiw(panel: Panel, denominator: tuple[str, ...] = ("D", "G", "Z")) -> WeightSet:
    design = build_risk_design(panel, denominator, "observation")
    num = fit_ph_design(design.subset(("D",)))
    den = fit_ph_design(design)
    return iiw_weights(panel, den, num)


def _sim1_replication(spec: ScenarioSpec, rep: int) -> ReplicationResult:
    panel = gen_panel(_sim1_dgp(spec), RngStream(spec.seed, (spec.study, spec.scenario_index, rep)))
    estimates: list[Estimate] = []
    failures: list[Failure] = []
    extremity: list[WeightExtremity] = []

    iiw, iiw_err = _try(lambda: _stabilized_iiw(panel))
    iptw, iptw_err = _try(lambda: iptw_weights(panel, fit_propensity(panel, ("W",))))
    ipcw, ipcw_err = _try(
        lambda: ipcw_weights(
            panel, fit_censoring(panel, PhSpec(("D", "W", "Z"), event_source="censoring"))
        )
    )
    fiptiw = combine([iiw, iptw]) if iiw is not None and iptw is not None else None
    fiptiw_err = iiw_err or iptw_err
    fipticw = combine([fiptiw, ipcw]) if fiptiw is not None and ipcw is not None else None
    fipticw_err = fiptiw_err or ipcw_err

    plan = (
        ("unweighted", None, None),
        ("iiw", iiw, iiw_err),
        ("iptw", iptw, iptw_err),
        ("fiptiw", fiptiw, fiptiw_err),
        ("fipticw", fipticw, fipticw_err),
    )
    for method, ws, err in plan:
        if err is not None:
            failures.append(Failure(method, err))
            continue
        value, gee_err = _try(lambda: _gee_effect(panel, ws))
        if gee_err is not None:
            failures.append(Failure(method, gee_err))
        else:
            estimates.append(Estimate(method, value))
    for ws in (iiw, iptw, ipcw, fiptiw, fipticw):
        if ws is not None and ws.n_entries:
            extremity.append(_weight_extremity(ws))

    return ReplicationResult(
        scenario=spec.scenario_id,
        replication=rep,
        estimates=tuple(estimates),
        failures=tuple(failures),
        weight_extremity=tuple(extremity),
    )


def _sim2_replication(spec: ScenarioSpec, rep: int) -> ReplicationResult:
    panel = gen_panel(_sim2_dgp(spec), RngStream(spec.seed, (spec.study, spec.scenario_index, rep)))
    estimates: list[Estimate] = []
    failures: list[Failure] = []
    extremity: list[WeightExtremity] = []

    value, err = _try(lambda: _gee_effect(panel))
    if err is None:
        estimates.append(Estimate("naive", value))
    else:
        failures.append(Failure("naive", err))

    design, design_err = _try(lambda: build_risk_design(panel, ("D", "G", "Z"), "observation"))
    num, num_err = (None, design_err)
    if design is not None:
        num, num_err = _try(lambda: fit_ph_design(design.subset(("D",))))

    for subset in _SUBSETS:
        label = "".join(name.lower() for name in subset)
        if num_err is not None:
            failures.append(Failure(label, num_err))
            continue

        def one_subset():
            den = fit_ph_design(design.subset(subset))
            ws = iiw_weights(panel, den, num)
            return ws, _gee_effect(panel, ws)

        pair, err = _try(one_subset)
        if err is not None:
            failures.append(Failure(label, err))
            continue
        ws, value = pair
        estimates.append(Estimate(label, value))
        if subset == ("D", "G", "Z") and ws.n_entries:
            extremity.append(_weight_extremity(ws))

    return ReplicationResult(
        scenario=spec.scenario_id,
        replication=rep,
        estimates=tuple(estimates),
        failures=tuple(failures),
        weight_extremity=tuple(extremity),
    )


def _treated_residuals(panel: Panel) -> tuple[np.ndarray, np.ndarray]:
    """Per-observation treatment indicator and offset-adjusted outcome."""
    d = np.concatenate(
        [np.full(s.n_obs, s.baseline["D"]) for s in panel.subjects]
    ) if panel.n_observations else np.empty(0)
    resid = np.concatenate(
        [s.outcomes - s.series["offset"].values_at(s.obs_times) for s in panel.subjects]
    ) if panel.n_observations else np.empty(0)
    return d, resid


def _ratio_effect(d: np.ndarray, resid: np.ndarray, w: np.ndarray) -> float:
    # closed-form weighted least squares for the one-column binary design
    denom = float(np.sum(w * d))
    if denom <= 0.0:
        raise DataError("no treated observations carry weight")
    return float(np.sum(w * d * resid) / denom)


def _sim3_replication(spec: ScenarioSpec, rep: int) -> ReplicationResult:
    panel = gen_panel(_sim3_dgp(spec), RngStream(spec.seed, (spec.study, spec.scenario_index, rep)))
    estimates: list[Estimate] = []
    failures: list[Failure] = []
    extremity: list[WeightExtremity] = []
    d, resid = _treated_residuals(panel)

    iiw, iiw_err = _try(lambda: _stabilized_iiw(panel))
    iptw, iptw_err = _try(lambda: iptw_weights(panel, fit_propensity(panel, ("W",))))
    fiptiw = combine([iiw, iptw]) if iiw is not None and iptw is not None else None
    fiptiw_err = iiw_err or iptw_err

    for method, ws, err in (("iiw", iiw, iiw_err), ("iptw", iptw, iptw_err), ("fiptiw", fiptiw, fiptiw_err)):
        if err is not None:
            failures.append(Failure(method, err))
            continue
        value, eff_err = _try(lambda: _ratio_effect(d, resid, ws.values))
        if eff_err is None:
            estimates.append(Estimate(method, value))
        else:
            failures.append(Failure(method, eff_err))
        if ws.n_entries:
            extremity.append(_weight_extremity(ws))

    ps = np.asarray(TRIM_GRID)
    for stage in ("before", "after"):
        if fiptiw_err is not None:
            failures.extend(Failure("fiptiw", fiptiw_err, stage, p) for p in TRIM_GRID)
            continue
        if stage == "before":
            # cap each factor at its own percentile, then multiply
            cut_iiw = np.quantile(iiw.values, ps)
            cut_iptw = np.quantile(iptw.values, ps)
            capped = np.minimum(iiw.values[None, :], cut_iiw[:, None]) * np.minimum(
                iptw.values[None, :], cut_iptw[:, None]
            )
        else:
            cut = np.quantile(fiptiw.values, ps)
            capped = np.minimum(fiptiw.values[None, :], cut[:, None])
        # same multiply grouping and row-wise pairwise sums as _ratio_effect,
        # so the p = 1.00 rows reproduce the untrimmed estimate bit for bit
        wd = capped * d
        denom = wd.sum(axis=1)
        numer = (wd * resid).sum(axis=1)
        for k, p in enumerate(TRIM_GRID):
            if denom[k] <= 0.0:
                failures.append(Failure("fiptiw", "DataError: no treated observations carry weight", stage, p))
            else:
                estimates.append(Estimate("fiptiw", float(numer[k] / denom[k]), stage, p))

    return ReplicationResult(
        scenario=spec.scenario_id,
        replication=rep,
        estimates=tuple(estimates),
        failures=tuple(failures),
        weight_extremity=tuple(extremity),
    )


_REPLICATION_FNS = {1: _sim1_replication, 2: _sim2_replication, 3: _sim3_replication}


# -------------------------------------------------------------------- runners


def replicate_scenario(spec: ScenarioSpec, *, workers: int = 1) -> tuple[ReplicationResult, ...]:
    """Run every replication of one scenario.

    Results are identical for any ``workers`` value: each replication uses
    its own RNG stream and the pool preserves submission order.
    """
    fn = _REPLICATION_FNS[spec.study]
    if workers <= 1:
        return tuple(fn(spec, rep) for rep in range(spec.replications))
    chunk = max(1, spec.replications // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return tuple(pool.map(partial(fn, spec), range(spec.replications), chunksize=chunk))


def run_scenarios(scenarios, *, workers: int = 1) -> tuple[ReplicationResult, ...]:
    """Replicate several scenarios and concatenate the results in order."""
    out: list[ReplicationResult] = []
    for spec in scenarios:
        out.extend(replicate_scenario(spec, workers=workers))
    return tuple(out)


def _require_study(spec: ScenarioSpec, study: int) -> None:
    if spec.study != study:
        raise ConfigError(f"expected a study-{study} scenario, got study {spec.study}")


def run_sim1(spec: ScenarioSpec, *, workers: int = 1) -> MetricsTable:
    """Censoring-sensitivity study: aggregate one scenario's replications."""
    _require_study(spec, 1)
    return aggregate(replicate_scenario(spec, workers=workers))


def run_sim2(spec: ScenarioSpec, *, workers: int = 1) -> MetricsTable:
    """Variable-inclusion study: aggregate one scenario's replications."""
    _require_study(spec, 2)
    return aggregate(replicate_scenario(spec, workers=workers))


def run_sim3(
    spec: ScenarioSpec, *, workers: int = 1
) -> tuple[MetricsTable, tuple[ExtremitySummaryRow, ...]]:
    """Trimming study: metrics over the percentile sweep plus extremity shares."""
    _require_study(spec, 3)
    results = replicate_scenario(spec, workers=workers)
    return aggregate(results), extremity_summary(results)


# ---------------------------------------------------------------- CSV output


def _fmt(x) -> str:
    if x is None:
        return ""
    return repr(float(x))


def write_replications_csv(results, path: str) -> None:
    """One row per estimate or failure, in pipeline order within a run."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scenario", "replication", "method", "stage", "trim_p", "estimate", "failure_reason"])
        for res in results:
            for e in res.estimates:
                w.writerow([res.scenario, res.replication, e.method, e.stage, _fmt(e.trim_p), _fmt(e.value), ""])
            for f in res.failures:
                w.writerow([res.scenario, res.replication, f.method, f.stage, _fmt(f.trim_p), "", f.reason])


def write_metrics_csv(table: MetricsTable, path: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["scenario", "method", "stage", "trim_p", "n_used", "n_failed",
             "bias", "variance", "mse", "mse_decomposed", "relative_bias"]
        )
        for r in table.rows:
            w.writerow(
                [r.scenario, r.method, r.stage, _fmt(r.trim_p), r.n_used, r.n_failed,
                 _fmt(r.bias), _fmt(r.variance), _fmt(r.mse), _fmt(r.mse_decomposed),
                 _fmt(r.relative_bias)]
            )


def write_extremity_csv(rows, path: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["scenario", "kind", "replications", "mean_max_weight",
             "mean_pct_over_5", "mean_pct_over_10", "mean_pct_over_20"]
        )
        for r in rows:
            w.writerow(
                [r.scenario, r.kind, r.replications, _fmt(r.mean_max_weight),
                 _fmt(r.mean_pct_over_5), _fmt(r.mean_pct_over_10), _fmt(r.mean_pct_over_20)]
            )


def emit_plot_data(table: MetricsTable, path: str) -> None:
    """Tidy long format for external plotting: one row per metric per cell.

    Undefined metrics (all-failed cells, single-replication variance) are
    skipped rather than written blank. An empty table writes the header only.
    """
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scenario", "method", "stage", "trim_p", "metric", "value"])
        for r in table.rows:
            for metric in ("bias", "variance", "mse", "relative_bias"):
                value = getattr(r, metric)
                if value is None:
                    continue
                w.writerow([r.scenario, r.method, r.stage, _fmt(r.trim_p), metric, _fmt(value)])
