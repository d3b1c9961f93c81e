"""Observation, treatment, and censoring weights, and percentile trimming.

Three elementary weight kinds are built here and multiplied into combined
kinds:

* IIW  - inverse intensity-of-observation weights, optionally stabilized by a
  numerator fit on the outcome-model covariates,
* IPTW - inverse probability of treatment weights from a logistic propensity
  model on baseline covariates,
* IPCW - inverse probability of censoring weights from a proportional hazards
  fit with a Breslow baseline.

``combine`` multiplies aligned sets pointwise (IIW*IPTW -> FIPTIW,
IIW*IPTW*IPCW -> FIPTICW) and ``trim`` caps entries at an empirical
percentile threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import DataError, ConvergenceError, PositivityError, RankError, SeparationError
from .panel import Panel, covariate_values, stacked
from .survival import FittedCensoringHazard, FittedIntensity

MAX_ITER = 50
SCORE_TOL = 1e-8
MAX_HALVINGS = 10

# A whole treatment class with |linear predictor| beyond this is separated:
# expit saturates, the likelihood keeps climbing toward a boundary forever.
SEPARATION_LP = 30.0
# A class pinned this deep at score convergence means the score is tiny only
# because expit saturated, not because a maximum exists; the "estimate" would
# be an artifact of the stopping tolerance.
BOUNDARY_LP = 15.0

PROPENSITY_MIN = 1e-12
SURVIVAL_FLOOR = 1e-8

_KIND_BY_FACTORS = {
    frozenset({"IIW"}): "IIW",
    frozenset({"IPTW"}): "IPTW",
    frozenset({"IPCW"}): "IPCW",
    frozenset({"IIW", "IPTW"}): "FIPTIW",
    frozenset({"IIW", "IPTW", "IPCW"}): "FIPTICW",
}


@dataclass(frozen=True)
class TrimRecord:
    """How a weight set was capped: percentile, threshold, count, stage."""

    percentile: float
    threshold: float
    n_trimmed: int
    stage: str  # "before" (single factor, pre-combination) or "after"


@dataclass(frozen=True, eq=False)
class WeightSet:
    """Per-(subject, observation time) weights of one kind.

    Entries are aligned with ``stacked(panel)``: ``subject_index[k]`` indexes
    into ``ids`` and ``times[k]`` is the observation time of entry ``k``.
    ``factors`` records which elementary kinds were multiplied in.
    """

    kind: str
    ids: tuple[str, ...]
    subject_index: np.ndarray
    times: np.ndarray
    values: np.ndarray
    factors: frozenset[str]
    trim: TrimRecord | None = None
    trimmed: np.ndarray | None = None

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        times = np.asarray(self.times, dtype=float)
        idx = np.asarray(self.subject_index, dtype=np.intp)
        if values.ndim != 1 or times.shape != values.shape or idx.shape != values.shape:
            raise ValueError("weight entries, times, and subject indices must align")
        if values.size and (not np.all(np.isfinite(values)) or np.any(values <= 0.0)):
            raise ValueError("weights must be strictly positive and finite")
        factors = frozenset(self.factors)
        if _KIND_BY_FACTORS.get(factors) != self.kind:
            raise ValueError(f"kind {self.kind!r} does not match factors {sorted(factors)}")
        for name, arr in (("values", values), ("times", times), ("subject_index", idx)):
            arr = arr.copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "ids", tuple(str(i) for i in self.ids))
        object.__setattr__(self, "factors", factors)

    @property
    def n_entries(self) -> int:
        return self.values.size

    def entry_ids(self) -> tuple[str, ...]:
        """Subject id of each entry, for dumping."""
        return tuple(self.ids[i] for i in self.subject_index)


@dataclass(frozen=True, eq=False)
class FittedPropensity:
    """Logistic treatment model: coefficients (intercept first) and fitted
    probabilities per subject, in panel order."""

    covariates: tuple[str, ...]
    coef: np.ndarray
    ids: tuple[str, ...]
    fitted: np.ndarray
    score: np.ndarray
    iterations: int
    converged: bool


def _expit(lp: np.ndarray) -> np.ndarray:
    out = np.empty_like(lp)
    pos = lp >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-lp[pos]))
    e = np.exp(lp[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _bernoulli_loglik(y: np.ndarray, lp: np.ndarray) -> float:
    return float(np.sum(y * lp) - np.sum(np.logaddexp(0.0, lp)))


def _baseline_matrix(panel: Panel, names: tuple[str, ...]) -> np.ndarray:
    out = np.empty((panel.n_subjects, len(names)))
    for i, subj in enumerate(panel.subjects):
        for j, name in enumerate(names):
            if name not in subj.baseline:
                raise DataError(
                    f"subject {subj.id!r} has no baseline value for {name!r}; "
                    "this model needs time-fixed covariates"
                )
            out[i, j] = subj.baseline[name]
    return out


def _pinned_class(lp: np.ndarray, treated: np.ndarray, control: np.ndarray, depth: float) -> str | None:
    if treated.size and float(lp[treated].min()) > depth:
        return "treated"
    if control.size and float(lp[control].max()) < -depth:
        return "control"
    return None


def fit_propensity(
    panel: Panel,
    covariates: tuple[str, ...] = (),
    treatment: str = "D",
    *,
    max_iter: int = MAX_ITER,
    tol: float = SCORE_TOL,
) -> FittedPropensity:
    """Fit a logistic regression of baseline treatment on baseline covariates.

    An intercept is always included (first coefficient). Newton steps with
    step halving keep the Bernoulli log likelihood non-decreasing across
    accepted updates. Raises ``SeparationError`` when one treatment class is
    driven arbitrarily deep into an expit tail, ``RankError`` on collinear
    covariates, ``ConvergenceError`` on iteration exhaustion.
    """
    names = tuple(covariates)
    y = _baseline_matrix(panel, (treatment,))[:, 0]
    if not np.all((y == 0.0) | (y == 1.0)):
        raise DataError(f"treatment column {treatment!r} must be coded 0/1")
    design = np.hstack([np.ones((panel.n_subjects, 1)), _baseline_matrix(panel, names)])

    treated = np.flatnonzero(y == 1.0)
    control = np.flatnonzero(y == 0.0)

    def separation_error(label: str) -> SeparationError:
        pattern = "intercept" + "".join(f", {n}" for n in names)
        return SeparationError(
            f"perfect separation of treatment {treatment!r}: every {label} subject "
            f"is pinned in an expit tail under covariates ({pattern})"
        )

    coef = np.zeros(design.shape[1])
    lp = design @ coef
    ll = _bernoulli_loglik(y, lp)
    prev_norm = 0.0
    converged = False
    iterations = 0
    for _ in range(max_iter):
        pi = _expit(lp)
        score = design.T @ (y - pi)
        if float(np.max(np.abs(score))) <= tol:
            pinned = _pinned_class(lp, treated, control, BOUNDARY_LP)
            if pinned is not None and prev_norm > 0.0:
                raise separation_error(pinned)
            converged = True
            break
        w = pi * (1.0 - pi)
        info = (design * w[:, None]).T @ design
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError as exc:
            raise RankError("singular weighted normal equations (collinear covariates)") from exc
        factor = 1.0
        for halving in range(MAX_HALVINGS + 1):
            cand = coef + factor * step
            lp_new = design @ cand
            ll_new = _bernoulli_loglik(y, lp_new)
            if ll_new >= ll - 1e-12 * (1.0 + abs(ll)) or halving == MAX_HALVINGS:
                break
            factor *= 0.5
        coef, lp, ll = cand, lp_new, ll_new
        iterations += 1
        norm = float(np.max(np.abs(coef)))
        if norm > prev_norm:
            pinned = _pinned_class(lp, treated, control, SEPARATION_LP)
            if pinned is not None:
                raise separation_error(pinned)
        prev_norm = max(prev_norm, norm)
    if not converged:
        raise ConvergenceError(f"propensity fit did not converge in {max_iter} iterations")

    pi = _expit(lp)
    return FittedPropensity(
        covariates=names,
        coef=coef,
        ids=panel.ids,
        fitted=pi,
        score=design.T @ (y - pi),
        iterations=iterations,
        converged=True,
    )


def _require_converged(fit, what: str) -> None:
    if not fit.converged:
        raise ValueError(f"{what} fit did not converge; refusing to build weights from it")


def _weight_set(panel: Panel, kind: str, values: np.ndarray) -> WeightSet:
    obs = stacked(panel)
    return WeightSet(
        kind=kind,
        ids=obs.ids,
        subject_index=obs.subject_index,
        times=obs.times,
        values=values,
        factors=frozenset({kind}),
    )


def _intensity_lp(subject, fit: FittedIntensity, times: np.ndarray) -> np.ndarray:
    lp = np.zeros(times.size)
    for name, c in zip(fit.covariates, fit.coef):
        lp += c * covariate_values(subject, name, times)
    return lp


def iiw_weights(
    panel: Panel,
    denominator: FittedIntensity,
    numerator: FittedIntensity | None = None,
) -> WeightSet:
    """Inverse intensity weights at every observation.

    Unstabilized: exp(-lp_den).  Stabilized (``numerator`` given, fit on the
    outcome-model covariates): exp(lp_num - lp_den).  Baseline rates cancel
    because both fits share the common-baseline convention.
    """
    _require_converged(denominator, "intensity denominator")
    if numerator is not None:
        _require_converged(numerator, "intensity numerator")
    log_w = np.zeros(panel.n_observations)
    pos = 0
    for subj in panel.subjects:
        if subj.n_obs == 0:
            continue
        seg = slice(pos, pos + subj.n_obs)
        log_w[seg] -= _intensity_lp(subj, denominator, subj.obs_times)
        if numerator is not None:
            log_w[seg] += _intensity_lp(subj, numerator, subj.obs_times)
        pos += subj.n_obs
    return _weight_set(panel, "IIW", np.exp(log_w))


def iptw_weights(panel: Panel, fit: FittedPropensity, treatment: str = "D") -> WeightSet:
    """Inverse probability of treatment weights, replicated to every
    observation time: 1/pi for treated subjects, 1/(1-pi) for controls."""
    _require_converged(fit, "propensity")
    if fit.ids != panel.ids:
        raise ValueError("propensity fit comes from a different panel")
    values = np.empty(panel.n_observations)
    pos = 0
    for i, subj in enumerate(panel.subjects):
        pi = float(fit.fitted[i])
        if pi < PROPENSITY_MIN or pi > 1.0 - PROPENSITY_MIN:
            raise PositivityError(
                f"fitted propensity {pi!r} for subject {subj.id!r} is numerically 0 or 1"
            )
        if subj.n_obs == 0:
            continue
        d = subj.baseline[treatment]
        values[pos : pos + subj.n_obs] = 1.0 / pi if d == 1.0 else 1.0 / (1.0 - pi)
        pos += subj.n_obs
    return _weight_set(panel, "IPTW", values)


def ipcw_weights(panel: Panel, fit: FittedCensoringHazard) -> WeightSet:
    """Inverse probability of censoring weights 1/S(t|x) from a Breslow
    baseline, for time-fixed censoring covariates."""
    _require_converged(fit, "censoring hazard")
    values = np.empty(panel.n_observations)
    pos = 0
    for subj in panel.subjects:
        if subj.n_obs == 0:
            continue
        x = np.array([_baseline_value(subj, name) for name in fit.covariates])
        risk = float(np.exp(fit.coef @ x)) if x.size else 1.0
        cum = fit.baseline_cumulative_hazard.values_at(subj.obs_times)
        surv = np.exp(-cum * risk)
        if np.any(surv < SURVIVAL_FLOOR):
            raise PositivityError(
                f"censoring survival below {SURVIVAL_FLOOR} for subject {subj.id!r}"
            )
        values[pos : pos + subj.n_obs] = 1.0 / surv
        pos += subj.n_obs
    return _weight_set(panel, "IPCW", values)


def _baseline_value(subject, name: str) -> float:
    if name not in subject.baseline:
        raise DataError(
            f"censoring covariate {name!r} is not a baseline value for subject "
            f"{subject.id!r}; survival-probability weights need time-fixed covariates"
        )
    return subject.baseline[name]


def combine(parts) -> WeightSet:
    """Pointwise product of weight sets sharing the same (subject, time) keys.

    The factor union names the result: IIW*IPTW is FIPTIW, IIW*IPTW*IPCW is
    FIPTICW. A single part is returned as an untrimmed copy of itself.
    """
    parts = list(parts)
    if not parts:
        raise ValueError("combine needs at least one weight set")
    first = parts[0]
    factors = set(first.factors)
    values = first.values.copy()
    for other in parts[1:]:
        if (
            other.ids != first.ids
            or not np.array_equal(other.subject_index, first.subject_index)
            or not np.array_equal(other.times, first.times)
        ):
            raise ValueError("weight sets are keyed to different (subject, time) pairs")
        overlap = factors & other.factors
        if overlap:
            raise ValueError(f"duplicate weight factors: {sorted(overlap)}")
        factors |= other.factors
        values *= other.values
    kind = _KIND_BY_FACTORS.get(frozenset(factors))
    if kind is None:
        raise ValueError(f"no named weight kind for factors {sorted(factors)}")
    return WeightSet(
        kind=kind,
        ids=first.ids,
        subject_index=first.subject_index,
        times=first.times,
        values=values,
        factors=frozenset(factors),
    )


def trim(ws: WeightSet, p: float) -> WeightSet:
    """Cap entries above the empirical ``p``-quantile at that quantile.

    The threshold uses linear interpolation between order statistics
    (``numpy.quantile`` default). Entries strictly above it are set to it;
    the count and threshold go into the trim record. Elementary sets are
    stage "before" (capped prior to combination), combined sets "after".
    """
    p = float(p)
    if not 0.5 <= p <= 1.0:
        raise ValueError(f"trim percentile must be in [0.5, 1.0], got {p}")
    if ws.n_entries == 0:
        raise ValueError("cannot trim an empty weight set")
    if ws.trim is not None and ws.trim.percentile == p:
        # Re-trimming at the same percentile is a no-op. Recomputing the
        # interpolated quantile on already-capped values would slide the
        # threshold down a little on every pass.
        return ws
    threshold = float(np.quantile(ws.values, p))
    mask = ws.values > threshold
    record = TrimRecord(
        percentile=p,
        threshold=threshold,
        n_trimmed=int(mask.sum()),
        stage="before" if len(ws.factors) == 1 else "after",
    )
    return replace(ws, values=np.minimum(ws.values, threshold), trim=record, trimmed=mask)
