"""Weighted GEE solving under an independence working correlation.

Identity-link fits reduce to closed-form weighted least squares on the
offset-subtracted outcome; logit-link fits run Fisher scoring on the weighted
Bernoulli estimating equation. The dispersion scalar is never estimated: the
root of the estimating equation does not depend on it. Covariances are
subject-clustered sandwiches that treat the weights as fixed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BSpline

from .errors import ConvergenceError, DataError, RankError
from .panel import Panel, covariate_values, stacked
from .weights import WeightSet

MAX_ITER = 50
SCORE_TOL = 1e-8
MAX_HALVINGS = 10
WALD_Z = 1.96
# smallest acceptable eigenvalue of the bread, relative to the largest
RANK_RTOL = 1e-10

LINKS = ("identity", "logit")


@dataclass(frozen=True)
class SplineSpec:
    """Cubic-by-default B-spline time trend. ``interior_knots=None`` means
    place knots at the tertiles of the pooled observation times."""

    interior_knots: tuple[float, ...] | None = None
    degree: int = 3

    def __post_init__(self) -> None:
        if self.degree < 1:
            raise ValueError("spline degree must be at least 1")
        if self.interior_knots is not None:
            knots = tuple(float(k) for k in self.interior_knots)
            if any(not np.isfinite(k) for k in knots):
                raise ValueError("spline knots must be finite")
            if any(a > b for a, b in zip(knots, knots[1:])):
                raise ValueError("spline knots must be sorted ascending")
            object.__setattr__(self, "interior_knots", knots)


@dataclass(frozen=True)
class OutcomeSpec:
    """What to regress: link, covariate columns, optional known offset
    (named panel covariate entering the linear predictor with coefficient 1),
    optional spline time trend, optional intercept.

    The spline requires the intercept (its leading basis column is dropped in
    the design and absorbed there) and excludes the offset: a known offset
    and an estimated time trend are alternative models of the time effect.
    """

    link: str
    covariates: tuple[str, ...] = ()
    offset: str | None = None
    spline: SplineSpec | None = None
    intercept: bool = False

    def __post_init__(self) -> None:
        if self.link not in LINKS:
            raise ValueError(f"link must be one of {LINKS}, got {self.link!r}")
        object.__setattr__(self, "covariates", tuple(self.covariates))
        if self.spline is not None and self.offset is not None:
            raise ValueError("spline time trend and known offset are mutually exclusive")
        if self.spline is not None and not self.intercept:
            raise ValueError("a spline time trend requires the intercept column")
        if not self.covariates and not self.intercept and self.spline is None:
            raise ValueError("the model has no columns")


@dataclass(frozen=True, eq=False)
class GeeFit:
    """Solved GEE: coefficients, their sandwich covariance, bookkeeping."""

    names: tuple[str, ...]
    beta: np.ndarray
    cov: np.ndarray
    iterations: int
    converged: bool
    n_obs: int
    sum_weights: float
    link: str
    spline_knots: tuple[float, ...] | None = None

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov))

    def coef(self, name: str) -> float:
        return float(self.beta[self.names.index(name)])


def _expit(lp: np.ndarray) -> np.ndarray:
    out = np.empty_like(lp)
    pos = lp >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-lp[pos]))
    e = np.exp(lp[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def tertile_knots(times: np.ndarray) -> tuple[float, float]:
    """1/3 and 2/3 empirical quantiles (linear interpolation) of pooled
    observation times, the default interior knots of the spline trend."""
    times = np.asarray(times, dtype=float)
    if np.unique(times).size < 2:
        raise ValueError("need at least 2 distinct times for spline knots")
    q = np.quantile(times, [1.0 / 3.0, 2.0 / 3.0])
    return float(q[0]), float(q[1])


def spline_basis(
    times: np.ndarray,
    interior_knots,
    degree: int = 3,
    *,
    boundary: tuple[float, float] | None = None,
) -> np.ndarray:
    """Full B-spline basis (partition of unity) with boundary knots at the
    min/max of ``times`` unless given explicitly."""
    times = np.asarray(times, dtype=float)
    if boundary is None:
        if np.unique(times).size < 2:
            raise ValueError("need at least 2 distinct times for a spline basis")
        lo, hi = float(times.min()), float(times.max())
    else:
        lo, hi = float(boundary[0]), float(boundary[1])
    interior = tuple(float(k) for k in interior_knots)
    if any(not (lo < k < hi) for k in interior):
        raise ValueError(f"interior knots must lie strictly inside ({lo}, {hi})")
    knots = np.r_[np.full(degree + 1, lo), interior, np.full(degree + 1, hi)]
    return BSpline.design_matrix(times, knots, degree).toarray()


def _stack_covariate(panel: Panel, name: str) -> np.ndarray:
    parts = []
    for subj in panel.subjects:
        if subj.n_obs == 0:
            continue
        try:
            parts.append(np.asarray(covariate_values(subj, name, subj.obs_times), dtype=float))
        except KeyError as exc:
            raise DataError(str(exc)) from exc
    return np.concatenate(parts) if parts else np.zeros(0)


def _design(panel: Panel, spec: OutcomeSpec):
    obs = stacked(panel)
    n = obs.times.size
    cols: list[np.ndarray] = []
    names: list[str] = []
    if spec.intercept:
        cols.append(np.ones(n))
        names.append("intercept")
    for name in spec.covariates:
        cols.append(_stack_covariate(panel, name))
        names.append(name)
    knots = None
    if spec.spline is not None:
        knots = spec.spline.interior_knots
        if knots is None:
            knots = tertile_knots(obs.times)
        basis = spline_basis(obs.times, knots, spec.spline.degree)
        # the dropped leading basis column is absorbed by the intercept
        for j in range(1, basis.shape[1]):
            cols.append(basis[:, j])
            names.append(f"time_spline_{j}")
    design = np.column_stack(cols)
    offset = _stack_covariate(panel, spec.offset) if spec.offset is not None else np.zeros(n)
    return obs, design, tuple(names), offset, knots


def _weight_vector(obs, weights: WeightSet | None) -> np.ndarray:
    if weights is None:
        return np.ones(obs.times.size)
    if (
        weights.ids != obs.ids
        or not np.array_equal(weights.subject_index, obs.subject_index)
        or not np.array_equal(weights.times, obs.times)
    ):
        raise ValueError("weight set is not aligned with this panel's observations")
    return weights.values


def _bread(design: np.ndarray, w_eff: np.ndarray) -> np.ndarray:
    return (design * w_eff[:, None]).T @ design


def _check_rank(bread: np.ndarray) -> None:
    eig = np.linalg.eigvalsh(bread)
    if eig.size and eig[0] <= RANK_RTOL * max(eig[-1], 1.0):
        raise RankError("rank-deficient design (collinear columns)")


def _weighted_bernoulli_loglik(y, lp, w) -> float:
    return float(np.sum(w * (y * lp - np.logaddexp(0.0, lp))))


def solve_gee(panel: Panel, spec: OutcomeSpec, weights: WeightSet | None = None) -> GeeFit:
    """Solve the weighted independence-working GEE.

    Identity link: closed-form weighted least squares of (outcome - offset)
    on the design. Logit link: Fisher scoring from zero with step halving,
    stopping when the estimating function's max-norm is at most 1e-8.
    """
    obs, design, names, offset, knots = _design(panel, spec)
    n, p = design.shape
    if n < p + 1:
        raise DataError(f"need at least {p + 1} observations for {p} coefficients, have {n}")
    w = _weight_vector(obs, weights)
    y = obs.outcomes

    if spec.link == "identity":
        bread = _bread(design, w)
        _check_rank(bread)
        beta = np.linalg.solve(bread, design.T @ (w * (y - offset)))
        mu = offset + design @ beta
        iterations, converged = 0, True
    else:
        if not np.all((y == 0.0) | (y == 1.0)):
            raise DataError("logit link requires 0/1 outcomes")
        beta = np.zeros(p)
        lp = offset + design @ beta
        ll = _weighted_bernoulli_loglik(y, lp, w)
        iterations = 0
        converged = False
        for _ in range(MAX_ITER):
            mu = _expit(lp)
            u = design.T @ (w * (y - mu))
            if float(np.max(np.abs(u))) <= SCORE_TOL:
                converged = True
                break
            bread = _bread(design, w * mu * (1.0 - mu))
            _check_rank(bread)
            step = np.linalg.solve(bread, u)
            factor = 1.0
            for halving in range(MAX_HALVINGS + 1):
                cand = beta + factor * step
                lp_new = offset + design @ cand
                ll_new = _weighted_bernoulli_loglik(y, lp_new, w)
                if ll_new >= ll - 1e-12 * (1.0 + abs(ll)) or halving == MAX_HALVINGS:
                    break
                factor *= 0.5
            beta, lp, ll = cand, lp_new, ll_new
            iterations += 1
        if not converged:
            raise ConvergenceError(f"logit GEE did not converge in {MAX_ITER} iterations")
        mu = _expit(lp)
        bread = _bread(design, w * mu * (1.0 - mu))
        _check_rank(bread)

    cov = _sandwich(obs, design, w, y - mu, bread)
    return GeeFit(
        names=names,
        beta=beta,
        cov=cov,
        iterations=iterations,
        converged=converged,
        n_obs=n,
        sum_weights=float(w.sum()),
        link=spec.link,
        spline_knots=tuple(knots) if knots is not None else None,
    )


def _sandwich(obs, design, w, resid, bread) -> np.ndarray:
    """Subject-clustered sandwich with the weights treated as known."""
    contrib = design * (w * resid)[:, None]
    per_subject = np.zeros((len(obs.ids), design.shape[1]))
    np.add.at(per_subject, obs.subject_index, contrib)
    meat = per_subject.T @ per_subject
    try:
        bread_inv = np.linalg.inv(bread)
    except np.linalg.LinAlgError as exc:
        raise RankError("singular bread matrix") from exc
    cov = bread_inv @ meat @ bread_inv
    return (cov + cov.T) / 2.0


def sandwich_covariance(
    panel: Panel, spec: OutcomeSpec, beta: np.ndarray, weights: WeightSet | None = None
) -> np.ndarray:
    """Standalone sandwich at an arbitrary coefficient vector."""
    obs, design, _, offset, _ = _design(panel, spec)
    w = _weight_vector(obs, weights)
    lp = offset + design @ np.asarray(beta, dtype=float)
    if spec.link == "identity":
        mu = lp
        curv = w
    else:
        mu = _expit(lp)
        curv = w * mu * (1.0 - mu)
    bread = _bread(design, curv)
    _check_rank(bread)
    return _sandwich(obs, design, w, obs.outcomes - mu, bread)


def estimating_function_value(
    panel: Panel, spec: OutcomeSpec, beta: np.ndarray, weights: WeightSet | None = None
) -> np.ndarray:
    """Weighted estimating function at ``beta``: design' (w * (y - mean)).

    For both links the working-variance and link-derivative factors cancel to
    1, so the summand is the design row times weighted raw residual. Exposed
    for the zero-mean Monte Carlo check against the known generating models.
    """
    obs, design, _, offset, _ = _design(panel, spec)
    w = _weight_vector(obs, weights)
    lp = offset + design @ np.asarray(beta, dtype=float)
    mu = lp if spec.link == "identity" else _expit(lp)
    return design.T @ (w * (obs.outcomes - mu))


def fit_summary(fit: GeeFit) -> dict:
    """JSON-ready fit summary: estimates, robust SEs, 95% Wald intervals,
    and odds-ratio columns under the logit link."""
    se = fit.se
    lo = fit.beta - WALD_Z * se
    hi = fit.beta + WALD_Z * se
    out = {
        "names": list(fit.names),
        "estimate": [float(b) for b in fit.beta],
        "se": [float(s) for s in se],
        "ci_lower": [float(v) for v in lo],
        "ci_upper": [float(v) for v in hi],
        "n_obs": fit.n_obs,
        "sum_weights": fit.sum_weights,
        "iterations": fit.iterations,
        "converged": fit.converged,
        "link": fit.link,
    }
    if fit.spline_knots is not None:
        out["spline_knots"] = [float(k) for k in fit.spline_knots]
    if fit.link == "logit":
        out["odds_ratio"] = [float(v) for v in np.exp(fit.beta)]
        out["or_ci_lower"] = [float(v) for v in np.exp(lo)]
        out["or_ci_upper"] = [float(v) for v in np.exp(hi)]
    return out
