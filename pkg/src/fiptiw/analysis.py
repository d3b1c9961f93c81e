"""Observational-panel analysis: weighted marginal odds models.

Reads a long-format panel from CSV, applies the preprocessing the method
expects (optional one-subject-per-cluster downsampling, artificial censoring
at a common cutoff), builds the requested weight sets, and solves a
logit-link GEE with a cubic-spline time trend plus the treatment indicator
for each method. The treatment row of each fit — estimate, robust SE, Wald
interval, and the same on the odds-ratio scale — is the deliverable.

Everything is a pure function of (input files, config): rerunning writes
byte-identical outputs.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, fields

import numpy as np

from .errors import ConfigError, DataError
from .gee import WALD_Z, OutcomeSpec, SplineSpec, solve_gee
from .panel import Panel, one_per_cluster, read_panel_csv, truncate_follow_up
from .survival import build_risk_design, fit_ph_design
from .weights import WeightSet, combine, fit_propensity, iiw_weights, iptw_weights, trim

__all__ = [
    "METHODS",
    "AnalyzeConfig",
    "MethodRow",
    "AnalysisResult",
    "analyze",
    "computed_weights",
    "write_analysis_csv",
    "write_weights_csv",
]

# estimator lineup: unweighted, each single weighting, their product, and
# the product capped at a percentile
METHODS = ("none", "iptw", "iiw", "fiptiw", "fiptiw-trimmed")

_NEEDS_IPTW = {"iptw", "fiptiw", "fiptiw-trimmed"}
_NEEDS_IIW = {"iiw", "fiptiw", "fiptiw-trimmed"}


@dataclass(frozen=True)
class AnalyzeConfig:
    """Inputs and knobs of one analysis run.

    ``spline_knots=None`` places the interior knots at the tertiles of the
    pooled observation times after censoring. ``cluster_col`` triggers the
    one-subject-per-cluster preprocessing step with its own seed.
    """

    observations_csv: str
    treatment_col: str
    propensity_covariates: tuple[str, ...]
    intensity_covariates: tuple[str, ...]
    subjects_csv: str | None = None
    outcome_col: str = "outcome"
    id_col: str = "id"
    time_col: str = "time"
    censor_col: str = "censor_time"
    censoring_cutoff: float = 182.5
    spline_knots: tuple[float, ...] | None = None
    trim_percentile: float = 0.95
    trim_stage: str = "after"
    methods: tuple[str, ...] = METHODS
    cluster_col: str | None = None
    cluster_seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "propensity_covariates", tuple(self.propensity_covariates))
        object.__setattr__(self, "intensity_covariates", tuple(self.intensity_covariates))
        object.__setattr__(self, "methods", tuple(self.methods))
        if not self.methods:
            raise ConfigError("methods list is empty")
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}; choose from {METHODS}")
        if len(set(self.methods)) != len(self.methods):
            raise ConfigError("methods list has duplicates")
        if not self.intensity_covariates:
            raise ConfigError("intensity model needs at least one covariate")
        if not 0.5 <= self.trim_percentile <= 1.0:
            raise ConfigError(
                f"trim percentile must be in [0.5, 1.0], got {self.trim_percentile}"
            )
        if self.trim_stage not in ("before", "after"):
            raise ConfigError(f"trim stage must be 'before' or 'after', got {self.trim_stage!r}")
        if not (np.isfinite(self.censoring_cutoff) and self.censoring_cutoff > 0):
            raise ConfigError("censoring cutoff must be a positive number")
        if self.spline_knots is not None:
            knots = tuple(float(k) for k in self.spline_knots)
            if any(not np.isfinite(k) for k in knots):
                raise ConfigError("spline knots must be finite")
            object.__setattr__(self, "spline_knots", knots)

    @classmethod
    def from_mapping(cls, raw: dict) -> "AnalyzeConfig":
        """Build a config from parsed JSON, rejecting unknown keys."""
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        missing = [
            name
            for name in ("observations_csv", "treatment_col", "propensity_covariates", "intensity_covariates")
            if name not in raw
        ]
        if missing:
            raise ConfigError(f"config is missing required keys: {', '.join(missing)}")
        return cls(**raw)


@dataclass(frozen=True)
class MethodRow:
    """Treatment-effect row of one method's fit."""

    method: str
    estimate: float
    se: float
    ci_lower: float
    ci_upper: float
    odds_ratio: float
    or_ci_lower: float
    or_ci_upper: float
    n_obs: int
    sum_weights: float
    converged: bool


@dataclass(frozen=True)
class AnalysisResult:
    rows: tuple[MethodRow, ...]
    spline_knots: tuple[float, ...]
    n_subjects: int
    n_observations: int
    censoring_cutoff: float

    def row(self, method: str) -> MethodRow:
        for r in self.rows:
            if r.method == method:
                return r
        raise KeyError(f"no row for method {method!r}")


def _load_panel(config: AnalyzeConfig) -> Panel:
    panel = read_panel_csv(
        config.observations_csv,
        config.subjects_csv,
        id_col=config.id_col,
        time_col=config.time_col,
        outcome_col=config.outcome_col,
        censor_col=config.censor_col,
    )
    if config.cluster_col is not None:
        panel = one_per_cluster(
            panel, config.cluster_col, np.random.default_rng(config.cluster_seed)
        )
    referenced = {config.treatment_col}
    referenced.update(config.propensity_covariates)
    referenced.update(config.intensity_covariates)
    for s in panel.subjects:
        missing = sorted(n for n in referenced if n not in s.baseline and n not in s.series)
        if missing:
            raise DataError(f"subject {s.id!r} lacks columns: {', '.join(missing)}")
    last_observed = max(
        (float(s.obs_times[-1]) for s in panel.subjects if s.n_obs), default=0.0
    )
    if config.censoring_cutoff > last_observed:
        raise ConfigError(
            f"censoring cutoff {config.censoring_cutoff} exceeds the last "
            f"observed time {last_observed}"
        )
    return truncate_follow_up(panel, config.censoring_cutoff)


def _method_weights(panel: Panel, config: AnalyzeConfig) -> dict[str, WeightSet | None]:
    """One weight set per requested method (None for the unweighted fit)."""
    wanted = set(config.methods)
    iptw = iiw = None
    if wanted & _NEEDS_IPTW:
        propensity = fit_propensity(
            panel, config.propensity_covariates, config.treatment_col
        )
        iptw = iptw_weights(panel, propensity, config.treatment_col)
    if wanted & _NEEDS_IIW:
        design = build_risk_design(panel, config.intensity_covariates, "observation")
        denominator = fit_ph_design(design)
        if config.treatment_col in config.intensity_covariates:
            numerator = fit_ph_design(design.subset((config.treatment_col,)))
        else:
            numerator = fit_ph_design(
                build_risk_design(panel, (config.treatment_col,), "observation")
            )
        iiw = iiw_weights(panel, denominator, numerator)

    out: dict[str, WeightSet | None] = {}
    for method in config.methods:
        if method == "none":
            out[method] = None
        elif method == "iptw":
            out[method] = iptw
        elif method == "iiw":
            out[method] = iiw
        elif method == "fiptiw":
            out[method] = combine([iiw, iptw])
        else:  # fiptiw-trimmed
            p = config.trim_percentile
            if config.trim_stage == "before":
                out[method] = combine([trim(iiw, p), trim(iptw, p)])
            else:
                out[method] = trim(combine([iiw, iptw]), p)
    return out


def analyze(config: AnalyzeConfig) -> AnalysisResult:
    """Run every requested method on the configured panel."""
    panel = _load_panel(config)
    weight_sets = _method_weights(panel, config)
    spec = OutcomeSpec(
        "logit",
        covariates=(config.treatment_col,),
        spline=SplineSpec(interior_knots=config.spline_knots),
        intercept=True,
    )
    rows = []
    knots: tuple[float, ...] = ()
    for method in config.methods:
        fit = solve_gee(panel, spec, weights=weight_sets[method])
        knots = fit.spline_knots or ()
        k = fit.names.index(config.treatment_col)
        est = float(fit.beta[k])
        se = float(fit.se[k])
        lo, hi = est - WALD_Z * se, est + WALD_Z * se
        rows.append(
            MethodRow(
                method=method,
                estimate=est,
                se=se,
                ci_lower=lo,
                ci_upper=hi,
                odds_ratio=float(np.exp(est)),
                or_ci_lower=float(np.exp(lo)),
                or_ci_upper=float(np.exp(hi)),
                n_obs=fit.n_obs,
                sum_weights=fit.sum_weights,
                converged=fit.converged,
            )
        )
    return AnalysisResult(
        rows=tuple(rows),
        spline_knots=knots,
        n_subjects=panel.n_subjects,
        n_observations=panel.n_observations,
        censoring_cutoff=config.censoring_cutoff,
    )


def computed_weights(config: AnalyzeConfig) -> tuple[WeightSet, ...]:
    """The weight sets the analysis would use, for inspection dumps."""
    panel = _load_panel(config)
    weight_sets = _method_weights(panel, config)
    return tuple(ws for ws in weight_sets.values() if ws is not None)


def write_analysis_csv(result: AnalysisResult, path: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["method", "estimate", "se", "ci_lower", "ci_upper",
             "odds_ratio", "or_ci_lower", "or_ci_upper",
             "n_obs", "sum_weights", "converged"]
        )
        for r in result.rows:
            w.writerow(
                [r.method, repr(r.estimate), repr(r.se), repr(r.ci_lower), repr(r.ci_upper),
                 repr(r.odds_ratio), repr(r.or_ci_lower), repr(r.or_ci_upper),
                 r.n_obs, repr(r.sum_weights), int(r.converged)]
            )


def write_weights_csv(weight_sets, path: str) -> None:
    """Per-entry dump: one row per (kind, subject, time) with its weight and
    whether trimming capped it."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["kind", "id", "time", "weight", "trimmed"])
        for ws in weight_sets:
            ids = ws.entry_ids()
            capped = ws.trimmed if ws.trimmed is not None else np.zeros(ws.n_entries, dtype=bool)
            for k in range(ws.n_entries):
                w.writerow(
                    [ws.kind, ids[k], repr(float(ws.times[k])), repr(float(ws.values[k])), int(capped[k])]
                )
