"""Synthetic panel generation for the simulation studies.

A generated panel mirrors the structure the estimators expect: a binary
treatment assigned at baseline (randomized or by a logistic rule on the
enrollment covariate), a treatment-dependent Gaussian covariate, a
subject-specific log-time trend, observation times from a frailty-modulated
nonhomogeneous Poisson process sampled by thinning, outcomes with a shared
random intercept, and either uniform or hazard-inverted censoring.

All randomness flows through ``RngStream``: a (seed, stream-id) pair that
deterministically names its generator, so identical inputs reproduce
identical panels regardless of worker count or platform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BoundViolationError
from .panel import AffineSeries, Panel, ScaledLogSeries, Subject

# candidates per chunked thinning round
_CHUNK = 64
# grid size used to locate the dominating bound of the observation intensity
_BOUND_GRID = 10_000
_BOUND_HEADROOM = 1.001


@dataclass(frozen=True)
class RandomizedTreatment:
    """Coin-flip assignment with a fixed probability."""

    probability: float = 0.5

    def __post_init__(self) -> None:
        if not 0.0 < self.probability < 1.0:
            raise ValueError("treatment probability must be in (0, 1)")


@dataclass(frozen=True)
class LogisticTreatment:
    """Assignment probability expit(intercept + slope * enrollment covariate)."""

    intercept: float
    slope: float


@dataclass(frozen=True)
class UniformCensoring:
    """Censoring uniform on (tau/2, tau)."""


@dataclass(frozen=True)
class HazardCensoring:
    """Proportional hazards censoring, baseline hazard 0.1 t, inverted in
    closed form and truncated at the study end."""

    effects: tuple[float, float, float]  # on (treatment, enrollment, z)

    def __post_init__(self) -> None:
        object.__setattr__(self, "effects", tuple(float(e) for e in self.effects))


@dataclass(frozen=True)
class NoCensoring:
    """Everyone is followed to the study end."""


@dataclass(frozen=True)
class DgpSpec:
    """Everything that parameterizes one generating mechanism.

    ``outcome_effects`` multiply (treatment, centered log-time trend,
    centered z); ``intensity_effects`` multiply (treatment, log-time trend,
    z) inside the observation intensity, whose baseline rate is sqrt(t)/2.
    """

    n: int
    treatment: RandomizedTreatment | LogisticTreatment = field(
        default_factory=RandomizedTreatment
    )
    censoring: UniformCensoring | HazardCensoring | NoCensoring = field(
        default_factory=UniformCensoring
    )
    outcome_effects: tuple[float, float, float] = (0.5, 2.0, 1.0)
    intensity_effects: tuple[float, float, float] = (0.5, 0.3, 0.6)
    tau: float = 7.0
    frailty_variance: float = 0.1
    random_intercept_variance: float = 0.25
    noise_variance: float = 1.0
    z_means: tuple[float, float] = (2.0, 0.0)  # (control, treated)
    z_variances: tuple[float, float] = (1.0, 0.5)

    def __post_init__(self) -> None:
        if self.n < 2:
            raise ValueError("need at least 2 subjects")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        for name in ("frailty_variance", "random_intercept_variance", "noise_variance"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("outcome_effects", "intensity_effects"):
            vals = tuple(float(v) for v in getattr(self, name))
            if len(vals) != 3 or not all(math.isfinite(v) for v in vals):
                raise ValueError(f"{name} must be 3 finite numbers")
            object.__setattr__(self, name, vals)
        if len(self.z_variances) != 2 or any(v <= 0 for v in self.z_variances):
            raise ValueError("z_variances must be 2 positive numbers")
        object.__setattr__(self, "z_means", tuple(float(v) for v in self.z_means))
        object.__setattr__(self, "z_variances", tuple(float(v) for v in self.z_variances))


@dataclass(frozen=True)
class RngStream:
    """Deterministic generator naming: (seed, hierarchical stream id).

    ``child(*key)`` appends to the stream id; ``generator()`` always returns
    a fresh generator seeded identically, so the same stream replays the
    same draws on any platform and under any parallel schedule.
    """

    seed: int
    stream: tuple[int, ...] = ()

    def child(self, *key: int) -> "RngStream":
        return RngStream(self.seed, self.stream + tuple(int(k) for k in key))

    def generator(self) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=self.stream))


def _expit(x):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def gen_covariates(spec: DgpSpec, rng: np.random.Generator):
    """Draw (enrollment covariate, treatment, z) for every subject.

    Draw order is fixed: enrollment uniforms, treatment uniforms, one
    standard normal vector scaled into the arm-specific z distribution.
    """
    w = rng.random(spec.n)
    if isinstance(spec.treatment, RandomizedTreatment):
        prob = np.full(spec.n, spec.treatment.probability)
    else:
        prob = _expit(spec.treatment.intercept + spec.treatment.slope * w)
    d = (rng.random(spec.n) < prob).astype(float)
    z_std = rng.standard_normal(spec.n)
    m0, m1 = spec.z_means
    s0, s1 = np.sqrt(spec.z_variances)
    z = np.where(d == 1.0, m1 + s1 * z_std, m0 + s0 * z_std)
    return w, d, z


def thinning_sample(
    rate_fn, tau: float, rng: np.random.Generator, rate_bound: float
) -> np.ndarray:
    """Sample event times of a nonhomogeneous Poisson process on (0, tau].

    Candidate times arrive as a homogeneous process at ``rate_bound`` (gaps
    -log(u)/bound); each candidate at s <= tau is kept when an independent
    uniform is at most rate(s)/bound. Generation stops at the first candidate
    beyond tau, which is discarded without evaluating the rate there. A rate
    above the bound raises instead of silently accepting.
    """
    if not math.isfinite(rate_bound) or rate_bound < 0:
        raise ValueError("rate bound must be finite and nonnegative")
    if rate_bound == 0.0:
        return np.empty(0)
    out: list[float] = []
    s = 0.0
    while True:
        gaps = -np.log(rng.random(_CHUNK)) / rate_bound
        accept_u = rng.random(_CHUNK)
        cand = s + np.cumsum(gaps)
        within = cand <= tau
        if np.any(within):
            rates = np.asarray(rate_fn(cand[within]), dtype=float)
            if np.any(rates > rate_bound):
                worst = float(rates.max())
                raise BoundViolationError(
                    f"intensity {worst} exceeds its dominating bound {rate_bound}"
                )
            if np.any(rates < 0):
                raise ValueError("negative intensity")
            keep = accept_u[within] <= rates / rate_bound
            out.extend(cand[within][keep])
        if not np.all(within):
            return np.asarray(out)
        s = float(cand[-1])


def observation_rate(spec: DgpSpec, d: float, w: float, z: float, frailty: float):
    """One subject's observation intensity as a vectorized function of time."""
    a, b, c = spec.intensity_effects

    def rate(t):
        t = np.asarray(t, dtype=float)
        return frailty * 0.5 * np.sqrt(t) * np.exp(a * d + b * w * np.log(t) + c * z)

    return rate


def dominating_bound(rate_fn, tau: float) -> float:
    """Numeric dominating bound: a small headroom over the rate's maximum on
    a dense grid of (0, tau] that includes the endpoint. Runtime exceedances
    still raise inside the sampler."""
    grid = np.linspace(tau / _BOUND_GRID, tau, _BOUND_GRID)
    return _BOUND_HEADROOM * float(np.max(rate_fn(grid)))


def gen_observation_times(
    spec: DgpSpec, d: float, w: float, z: float, frailty: float, rng: np.random.Generator
) -> np.ndarray:
    """Uncensored observation times for one subject; the caller truncates at
    the censoring time."""
    if frailty < 0:
        raise ValueError("frailty must be nonnegative")
    rate = observation_rate(spec, d, w, z, frailty)
    return thinning_sample(rate, spec.tau, rng, dominating_bound(rate, spec.tau))


def outcome_mean(spec: DgpSpec, d: float, w: float, z: float, times) -> np.ndarray:
    """Deterministic part of the outcome: declining time trend plus the
    treatment effect plus arm-centered covariate effects."""
    times = np.asarray(times, dtype=float)
    e1, e2, e3 = spec.outcome_effects
    logt = np.log(times)
    z_center = spec.z_means[1] if d == 1.0 else spec.z_means[0]
    return (2.0 - times) + e1 * d + e2 * (w * logt - 0.5 * logt) + e3 * (z - z_center)


def gen_censoring_uniform(spec: DgpSpec, rng: np.random.Generator, size: int) -> np.ndarray:
    return rng.uniform(spec.tau / 2.0, spec.tau, size)


def gen_censoring_ph(spec: DgpSpec, d, w, z, rng: np.random.Generator) -> np.ndarray:
    """Invert the censoring survival function: with cumulative baseline
    hazard 0.05 t^2, C = sqrt(20 (-log U) exp(-effects . x)), truncated at
    the study end as administrative censoring."""
    if not isinstance(spec.censoring, HazardCensoring):
        raise ValueError("spec does not use hazard censoring")
    e1, e2, e3 = spec.censoring.effects
    u = rng.random(np.shape(d))
    c = np.sqrt(20.0 * (-np.log(u)) * np.exp(-(e1 * np.asarray(d) + e2 * np.asarray(w) + e3 * np.asarray(z))))
    return np.minimum(c, spec.tau)


def _draw_censoring(spec: DgpSpec, d, w, z, rng: np.random.Generator) -> np.ndarray:
    if isinstance(spec.censoring, UniformCensoring):
        return gen_censoring_uniform(spec, rng, len(d))
    if isinstance(spec.censoring, HazardCensoring):
        return gen_censoring_ph(spec, d, w, z, rng)
    return np.full(len(d), spec.tau)


# fixed purpose indices for the per-replication child streams
_COVARIATES, _FRAILTY, _CENSORING, _RANDOM_INTERCEPTS, _PER_SUBJECT = 0, 1, 2, 3, 4


def gen_panel(spec: DgpSpec, stream: RngStream) -> Panel:
    """Generate one complete panel.

    Each random purpose has its own child stream, and each subject's
    observation process and outcome noise live in a per-subject stream whose
    noise is drawn for ALL uncensored times before truncation; re-running the
    same stream without censoring therefore extends every subject's rows
    without changing the shared prefix.
    """
    w, d, z = gen_covariates(spec, stream.child(_COVARIATES).generator())
    shape = 1.0 / spec.frailty_variance
    frailty = stream.child(_FRAILTY).generator().gamma(shape, spec.frailty_variance, spec.n)
    censor = _draw_censoring(spec, d, w, z, stream.child(_CENSORING).generator())
    intercepts = stream.child(_RANDOM_INTERCEPTS).generator().normal(
        0.0, math.sqrt(spec.random_intercept_variance), spec.n
    )
    noise_sd = math.sqrt(spec.noise_variance)

    subjects = []
    for i in range(spec.n):
        rng_i = stream.child(_PER_SUBJECT, i).generator()
        all_times = gen_observation_times(spec, d[i], w[i], z[i], frailty[i], rng_i)
        noise = noise_sd * rng_i.standard_normal(all_times.size)
        keep = all_times <= censor[i]
        times = all_times[keep]
        outcomes = outcome_mean(spec, d[i], w[i], z[i], times) + intercepts[i] + noise[keep]
        subjects.append(
            Subject(
                id=str(i + 1),
                obs_times=times,
                outcomes=outcomes,
                censor_time=float(censor[i]),
                baseline={"D": float(d[i]), "W": float(w[i]), "Z": float(z[i])},
                series={
                    "G": ScaledLogSeries(float(w[i])),
                    "offset": AffineSeries(2.0, -1.0),
                },
            )
        )
    return Panel(subjects, tau=spec.tau)
