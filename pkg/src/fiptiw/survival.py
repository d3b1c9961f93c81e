"""Proportional hazards fitting on pooled risk sets.

Observation times are treated as recurrent events of a counting process with
a common (unspecified) baseline rate and at-risk interval [0, C_i]; censoring
times are single terminal events. Both share one Breslow partial-likelihood
engine: only the risk table differs. Covariates may be time-varying, so the
design is a dense (event time, subject, covariate) tensor evaluated once per
fit and reused across Newton iterations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, RankError
from .panel import Panel, StepSeries, covariate_values, risk_table

__all__ = [
    "PhSpec",
    "FittedIntensity",
    "FittedCensoringHazard",
    "RiskDesign",
    "build_risk_design",
    "fit_ph",
    "fit_ph_design",
    "fit_censoring",
    "log_partial_likelihood",
    "ph_score",
    "ph_information",
]

MAX_ITER = 25
SCORE_TOL = 1e-8
MAX_HALVINGS = 10
# hazard ratios in this domain are O(1); a coefficient this large means the
# partial likelihood is monotone (score decays to zero while the coefficient
# runs away, so waiting for non-convergence would miss it)
DIVERGENCE_NORM = 15.0


@dataclass(frozen=True)
class PhSpec:
    """Which covariates enter the linear predictor, and which events to model.

    An empty covariate tuple fits the null model (needed for baseline-only
    censoring hazards).
    """

    covariates: tuple[str, ...]
    event_source: str = "observation"

    def __post_init__(self) -> None:
        object.__setattr__(self, "covariates", tuple(self.covariates))
        if self.event_source not in ("observation", "censoring"):
            raise ValueError(f"unknown event source {self.event_source!r}")
        if len(set(self.covariates)) != len(self.covariates):
            raise ValueError("duplicate covariate names")


@dataclass(frozen=True)
class FittedIntensity:
    """Result of a proportional hazards fit.

    ``degenerate`` lists covariates that are constant within every risk set;
    their score is identically zero, so they are reported at 0 and flagged
    non-identifiable rather than treated as an error.
    """

    covariates: tuple[str, ...]
    coef: np.ndarray
    score: np.ndarray
    information: np.ndarray
    log_partial_likelihood: float
    iterations: int
    converged: bool
    degenerate: tuple[str, ...] = ()

    def linear_predictor(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values) @ self.coef


@dataclass(frozen=True)
class FittedCensoringHazard:
    """Censoring-hazard fit plus its Breslow cumulative baseline hazard."""

    covariates: tuple[str, ...]
    coef: np.ndarray
    baseline_cumulative_hazard: StepSeries
    converged: bool
    ph_fit: FittedIntensity


def _column_slice(idx: list[int]):
    """Slice equivalent to an evenly spaced index list, else None."""
    if len(idx) == 1:
        return slice(idx[0], idx[0] + 1)
    step = idx[1] - idx[0]
    if step > 0 and all(b - a == step for a, b in zip(idx, idx[1:])):
        return slice(idx[0], idx[-1] + step, step)
    return None


class RiskDesign:
    """Dense per-event-time design shared by every Newton iteration.

    Building this is the expensive part of a fit; ``subset`` reuses the
    tensor for nested covariate sets (the simulation studies fit many subsets
    of one design).
    """

    def __init__(self, times, d, dN, at_risk, Z, names, event_lp_weights=None,
                 _parent=None, _cols=None):
        self.times = times          # (E,)
        self.d = d                  # (E,) events per pooled time
        self.dN = dN                # (E, n) event indicator
        self.at_risk = at_risk      # (E, n) bool
        self.Z = Z                  # (E, n, p)
        self.names = tuple(names)
        E = times.size
        p = Z.shape[2]
        if _parent is not None:
            # subset of an existing design: everything that depends only on
            # events and risk sets carries over unchanged
            self._event_rows = _parent._event_rows
            self._event_cols = _parent._event_cols
            self._event_Z = _parent._event_Z[_cols] if p else np.zeros(0)
            self._gone = _parent._gone
            self._risk_size = _parent._risk_size
            self._nested = _parent._nested
            self._col_invariant = _parent._col_invariant[_cols]
            self._risk_order = _parent._risk_order
            self._risk_pos = _parent._risk_pos
        else:
            self._event_rows, self._event_cols = np.nonzero(dN)
            # sum of event covariates, coefficient independent
            self._event_Z = (
                Z[self._event_rows, self._event_cols].sum(axis=0) if p else np.zeros(0)
            )
            self._gone = ~at_risk
            self._risk_size = at_risk.sum(axis=1).astype(float)
            # Fits with covariates fixed over event times and nested risk
            # sets (risk only ever shrinks) reduce to suffix sums over
            # subjects sorted by how long they stay at risk: O(n) per Newton
            # step instead of O(E * n). Baseline-covariate models, which
            # dominate the simulation workload, all land here.
            self._nested = E <= 1 or bool(np.all(at_risk[:-1] >= at_risk[1:]))
            self._col_invariant = np.array(
                [bool(np.all(Z[:, :, k] == Z[0, :, k])) for k in range(p)], dtype=bool
            )
            if self._nested and E > 0:
                stay = at_risk.sum(axis=0)     # events each subject outlasts
                self._risk_order = np.argsort(stay, kind="stable")
                # risk set at event e (0-based) is _risk_order[pos_e:]
                self._risk_pos = np.searchsorted(
                    stay[self._risk_order], np.arange(E) + 1, side="left"
                )
            else:
                self._risk_order = self._risk_pos = None
        self._fast = self._nested and E > 0 and p > 0 and bool(np.all(self._col_invariant))
        if self._fast:
            self._fast_x = np.ascontiguousarray(Z[0][self._risk_order])  # (n, p)

    @property
    def n_params(self) -> int:
        return self.Z.shape[2]

    def subset(self, names: tuple[str, ...]) -> "RiskDesign":
        idx = [self.names.index(n) for n in names]
        fast = (
            self._nested
            and self.times.size > 0
            and len(idx) > 0
            and bool(np.all(self._col_invariant[idx]))
        )
        cols = _column_slice(idx) if fast else None
        # a fast subset never walks the full tensor, so a strided view is
        # enough; slow fits pay for a contiguous copy once and win it back
        # across the Newton iterations
        Zs = self.Z[:, :, cols] if cols is not None else self.Z[:, :, idx]
        return RiskDesign(
            self.times, self.d, self.dN, self.at_risk, Zs, names,
            _parent=self, _cols=idx,
        )

    def stats(self, coef: np.ndarray, order: int = 2):
        """Log partial likelihood and, for order >= 1/2, score/information."""
        E, n, p = self.Z.shape
        if p == 0:
            ll = float(-self.d @ np.log(self._risk_size))
            return ll, np.zeros(0), np.zeros((0, 0))
        if self._fast:
            return self._stats_invariant(coef, order)
        lp = self.Z @ coef
        np.copyto(lp, -np.inf, where=self._gone)
        shift = lp.max(axis=1)
        np.subtract(lp, shift[:, None], out=lp)
        w = np.exp(lp, out=lp)
        s0 = w.sum(axis=1)
        ll = float(self._event_Z @ coef) - float(self.d @ (np.log(s0) + shift))
        if order == 0:
            return ll, np.zeros(p), np.zeros((p, p))
        zbar = np.einsum("en,enp->ep", w, self.Z) / s0[:, None]
        score = self._event_Z - self.d @ zbar
        if order == 1:
            return ll, score, np.zeros((p, p))
        # info = sum_e d_e [S2_e/S0_e - zbar_e zbar_e^T]; the first term folds
        # into one (p, E*n) x (E*n, p) product instead of E tiny matmuls
        np.multiply(w, (self.d / s0)[:, None], out=w)
        a = w[:, :, None] * self.Z
        info = a.reshape(-1, p).T @ self.Z.reshape(-1, p)
        info -= (zbar * self.d[:, None]).T @ zbar
        return ll, score, info

    def _stats_invariant(self, coef: np.ndarray, order: int):
        """Suffix-sum path for time-fixed covariates with nested risk sets."""
        p = self.Z.shape[2]
        x = self._fast_x
        lp = x @ coef                               # (n,) risk-sorted
        shift = lp.max()
        w = np.exp(lp - shift)
        s0 = np.cumsum(w[::-1])[::-1][self._risk_pos]
        ll = float(self._event_Z @ coef) - float(self.d @ (np.log(s0) + shift))
        if order == 0:
            return ll, np.zeros(p), np.zeros((p, p))
        wx = w[:, None] * x
        s1 = np.cumsum(wx[::-1], axis=0)[::-1][self._risk_pos]
        zbar = s1 / s0[:, None]
        score = self._event_Z - self.d @ zbar
        if order == 1:
            return ll, score, np.zeros((p, p))
        wxx = wx[:, :, None] * x[:, None, :]
        s2 = np.cumsum(wxx[::-1], axis=0)[::-1][self._risk_pos]
        info = np.einsum("e,epq->pq", self.d / s0, s2)
        info -= (zbar * self.d[:, None]).T @ zbar
        return ll, score, info

    def denominators(self, coef: np.ndarray) -> np.ndarray:
        """Risk-set sums of exp(linear predictor) at each event time."""
        E, n, p = self.Z.shape
        lp = self.Z @ coef if p else np.zeros((E, n))
        lp_risk = np.where(self.at_risk, lp, -np.inf)
        shift = lp_risk.max(axis=1)
        return np.exp(shift) * np.exp(lp_risk - shift[:, None]).sum(axis=1)

    def structurally_degenerate(self) -> np.ndarray:
        """Covariates constant across every risk set (zero score forever)."""
        if self._fast:
            x = self._fast_x
            hi = np.maximum.accumulate(x[::-1], axis=0)[::-1][self._risk_pos]
            lo = np.minimum.accumulate(x[::-1], axis=0)[::-1][self._risk_pos]
            return np.all(hi == lo, axis=0)
        mask = self.at_risk[:, :, None]
        hi = np.where(mask, self.Z, -np.inf).max(axis=1)  # (E, p)
        lo = np.where(mask, self.Z, np.inf).min(axis=1)
        return np.all(hi == lo, axis=0)


def build_risk_design(panel: Panel, names: tuple[str, ...], event_source: str) -> RiskDesign:
    rt = risk_table(panel, event_source)
    E, n, p = rt.times.size, panel.n_subjects, len(names)
    Z = np.empty((E, n, p))
    for j, subj in enumerate(panel.subjects):
        for k, name in enumerate(names):
            Z[:, j, k] = covariate_values(subj, name, rt.times)
    dN = rt.events.astype(float)
    return RiskDesign(rt.times, dN.sum(axis=1), dN, rt.at_risk, Z, names)


def fit_ph_design(
    design: RiskDesign,
    *,
    max_iter: int = MAX_ITER,
    tol: float = SCORE_TOL,
) -> FittedIntensity:
    """Newton-Raphson from zero on a prebuilt risk design."""
    p = design.n_params
    coef = np.zeros(p)
    if p == 0:
        ll, score, info = design.stats(coef)
        return FittedIntensity((), coef, score, info, ll, 0, True)

    degenerate = design.structurally_degenerate()
    active = ~degenerate
    ll, score, info = design.stats(coef)
    iterations = 0
    converged = bool(np.max(np.abs(score), initial=0.0) <= tol)
    while not converged and iterations < max_iter:
        iterations += 1
        try:
            step_active = np.linalg.solve(
                info[np.ix_(active, active)], score[active]
            )
        except np.linalg.LinAlgError as exc:
            raise RankError("singular information matrix (collinear covariates)") from exc
        step = np.zeros(p)
        step[active] = step_active
        factor = 1.0
        for halving in range(MAX_HALVINGS + 1):
            cand = coef + factor * step
            ll_new, score_new, info_new = design.stats(cand)
            if ll_new >= ll - 1e-12 * (1.0 + abs(ll)) or halving == MAX_HALVINGS:
                break
            factor *= 0.5
        coef = cand
        ll, score, info = ll_new, score_new, info_new
        if np.max(np.abs(coef)) > DIVERGENCE_NORM:
            raise ConvergenceError(
                "diverging coefficients: monotone partial likelihood "
                "(a covariate separates events from risk sets)"
            )
        converged = bool(np.max(np.abs(score)) <= tol)
    if not converged:
        raise ConvergenceError(
            f"proportional hazards fit did not converge in {max_iter} iterations "
            f"(max |score| = {np.max(np.abs(score)):.3g})"
        )
    return FittedIntensity(
        covariates=design.names,
        coef=coef,
        score=score,
        information=info,
        log_partial_likelihood=ll,
        iterations=iterations,
        converged=converged,
        degenerate=tuple(n for n, f in zip(design.names, degenerate) if f),
    )


def fit_ph(panel: Panel, spec: PhSpec, *, max_iter: int = MAX_ITER, tol: float = SCORE_TOL) -> FittedIntensity:
    """Fit a proportional hazards model for observation or censoring events.

    Parameters
    ----------
    panel : Panel
    spec : PhSpec
        Covariate names (evaluated at pooled event times, so time-varying
        series are supported) and the event source.

    Returns
    -------
    FittedIntensity

    Raises
    ------
    ConvergenceError
        No convergence within ``max_iter`` iterations, or a monotone
        partial likelihood (coefficients diverging).
    RankError
        Collinear covariates make the information matrix singular.
    DataError
        The panel has no events of the requested kind.
    """
    design = build_risk_design(panel, tuple(spec.covariates), spec.event_source)
    return fit_ph_design(design, max_iter=max_iter, tol=tol)


def fit_censoring(panel: Panel, spec: PhSpec, **kw) -> FittedCensoringHazard:
    """Fit the censoring hazard and its Breslow cumulative baseline.

    The baseline is the step function H0(t) = sum over censoring times s <= t
    of d_s divided by the risk-set sum of exp(linear predictor).
    """
    if spec.event_source != "censoring":
        raise ValueError("fit_censoring requires event_source='censoring'")
    design = build_risk_design(panel, tuple(spec.covariates), "censoring")
    fit = fit_ph_design(design, **kw)
    denom = design.denominators(fit.coef)
    baseline = StepSeries(
        knots=tuple(float(t) for t in design.times),
        values=tuple(np.cumsum(design.d / denom)),
        fill=0.0,
    )
    return FittedCensoringHazard(
        covariates=fit.covariates,
        coef=fit.coef,
        baseline_cumulative_hazard=baseline,
        converged=fit.converged,
        ph_fit=fit,
    )


def log_partial_likelihood(panel: Panel, spec: PhSpec, coef: np.ndarray) -> float:
    design = build_risk_design(panel, tuple(spec.covariates), spec.event_source)
    return design.stats(np.asarray(coef, dtype=float), order=0)[0]


def ph_score(panel: Panel, spec: PhSpec, coef: np.ndarray) -> np.ndarray:
    design = build_risk_design(panel, tuple(spec.covariates), spec.event_source)
    return design.stats(np.asarray(coef, dtype=float), order=1)[1]


def ph_information(panel: Panel, spec: PhSpec, coef: np.ndarray) -> np.ndarray:
    design = build_risk_design(panel, tuple(spec.covariates), spec.event_source)
    return design.stats(np.asarray(coef, dtype=float))[2]
