"""Irregular longitudinal panels.

A panel holds one record stream per subject: observation times, outcomes
measured at those times, a censoring (end of follow-up) time, baseline
covariates, and time-varying covariates represented as evaluable series.
Covariates must be evaluable at arbitrary times inside the study window, not
just at the subject's own observation times, because risk-set calculations
evaluate every at-risk subject's covariates at other subjects' event times.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

from .errors import DataError

__all__ = [
    "ConstantSeries",
    "StepSeries",
    "AffineSeries",
    "ScaledLogSeries",
    "CovariateSeries",
    "Subject",
    "Panel",
    "StackedObservations",
    "RiskTable",
    "build_panel",
    "read_panel_csv",
    "write_panel_csv",
    "covariate_at",
    "covariate_values",
    "risk_table",
    "stacked",
    "with_history_series",
    "truncate_follow_up",
    "one_per_cluster",
]


@dataclass(frozen=True)
class ConstantSeries:
    """Covariate fixed at a single value for all times."""

    value: float

    def values_at(self, times: np.ndarray) -> np.ndarray:
        return np.full(np.shape(times), float(self.value))


@dataclass(frozen=True)
class StepSeries:
    """Piecewise-constant covariate defined by (knot, value) pairs.

    Lookup at time t returns the value at the greatest knot <= t (last
    observation carried forward), or ``fill`` when t precedes every knot.
    With ``strictly_before=True`` the lookup uses the greatest knot < t,
    which is the right semantics for history processes such as "outcome at
    the previous visit": at a visit time the current measurement must not
    leak into its own predictor.
    """

    knots: tuple[float, ...]
    values: tuple[float, ...]
    fill: float = 0.0
    strictly_before: bool = False

    def __post_init__(self) -> None:
        if len(self.knots) != len(self.values):
            raise DataError("step series needs one value per knot")
        k = np.asarray(self.knots, dtype=float)
        if k.size and (not np.all(np.isfinite(k)) or np.any(np.diff(k) <= 0)):
            raise DataError("step series knots must be finite and strictly increasing")

    def values_at(self, times: np.ndarray) -> np.ndarray:
        times = np.asarray(times, dtype=float)
        side = "left" if self.strictly_before else "right"
        idx = np.searchsorted(np.asarray(self.knots, dtype=float), times, side=side)
        padded = np.concatenate(([float(self.fill)], np.asarray(self.values, dtype=float)))
        return padded[idx]


@dataclass(frozen=True)
class AffineSeries:
    """Closed-form covariate a + b*t (used for known offsets such as 2 - t)."""

    intercept: float
    slope: float

    def values_at(self, times: np.ndarray) -> np.ndarray:
        times = np.asarray(times, dtype=float)
        return self.intercept + self.slope * times


@dataclass(frozen=True)
class ScaledLogSeries:
    """Closed-form covariate c*log(t), defined for t > 0."""

    scale: float

    def values_at(self, times: np.ndarray) -> np.ndarray:
        times = np.asarray(times, dtype=float)
        if np.any(times <= 0.0):
            raise ValueError("log-form series is undefined at t <= 0")
        return self.scale * np.log(times)


CovariateSeries = Union[ConstantSeries, StepSeries, AffineSeries, ScaledLogSeries]


@dataclass(frozen=True, eq=False)
class Subject:
    """One subject's observation stream.

    ``obs_times`` are strictly increasing and never exceed ``censor_time``;
    an observation at exactly the censoring time counts as observed.
    """

    id: str
    obs_times: np.ndarray
    outcomes: np.ndarray
    censor_time: float
    baseline: dict[str, float] = field(default_factory=dict)
    series: dict[str, CovariateSeries] = field(default_factory=dict)

    def __post_init__(self) -> None:
        t = np.asarray(self.obs_times, dtype=float)
        y = np.asarray(self.outcomes, dtype=float)
        object.__setattr__(self, "id", str(self.id))
        object.__setattr__(self, "obs_times", t)
        object.__setattr__(self, "outcomes", y)
        if t.ndim != 1 or y.ndim != 1 or t.shape != y.shape:
            raise DataError(f"subject {self.id}: times and outcomes must align")
        if not np.all(np.isfinite(t)) or not np.all(np.isfinite(y)):
            raise DataError(f"subject {self.id}: non-finite time or outcome")
        if t.size and np.any(np.diff(t) <= 0):
            raise DataError(f"subject {self.id}: observation times must strictly increase")
        if not np.isfinite(self.censor_time) or self.censor_time < 0:
            raise DataError(f"subject {self.id}: bad censoring time {self.censor_time}")
        if t.size and (t[0] < 0 or t[-1] > self.censor_time):
            raise DataError(
                f"subject {self.id}: observation times must lie in [0, censor_time]"
            )
        overlap = set(self.baseline) & set(self.series)
        if overlap:
            raise DataError(f"subject {self.id}: names used twice: {sorted(overlap)}")
        t.setflags(write=False)
        y.setflags(write=False)

    @property
    def n_obs(self) -> int:
        return int(self.obs_times.size)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Subject):
            return NotImplemented
        return (
            self.id == other.id
            and self.censor_time == other.censor_time
            and np.array_equal(self.obs_times, other.obs_times)
            and np.array_equal(self.outcomes, other.outcomes)
            and self.baseline == other.baseline
            and self.series == other.series
        )


@dataclass(frozen=True, eq=False)
class Panel:
    """A collection of subjects observed over the window [0, tau]."""

    subjects: tuple[Subject, ...]
    tau: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "subjects", tuple(self.subjects))
        if not self.subjects:
            raise DataError("panel has no subjects")
        if not np.isfinite(self.tau) or self.tau <= 0:
            raise DataError(f"tau must be positive and finite, got {self.tau}")
        ids = [s.id for s in self.subjects]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate subject ids")
        for s in self.subjects:
            if s.censor_time > self.tau:
                raise DataError(f"subject {s.id}: censoring time exceeds tau")
        object.__setattr__(self, "_index", {s.id: k for k, s in enumerate(self.subjects)})

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(s.id for s in self.subjects)

    @property
    def n_subjects(self) -> int:
        return len(self.subjects)

    @property
    def n_observations(self) -> int:
        return int(sum(s.n_obs for s in self.subjects))

    def subject(self, id: str) -> Subject:
        return self.subjects[self._index[str(id)]]

    def censor_times(self) -> np.ndarray:
        return np.array([s.censor_time for s in self.subjects])

    def covariate_at(self, id: str, name: str, t: float) -> float:
        return covariate_at(self.subject(id), name, t, tau=self.tau)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Panel):
            return NotImplemented
        return self.tau == other.tau and self.subjects == other.subjects


@dataclass(frozen=True)
class StackedObservations:
    """All (subject, time) observation rows of a panel, in panel order."""

    subject_index: np.ndarray
    ids: tuple[str, ...]
    times: np.ndarray
    outcomes: np.ndarray


@dataclass(frozen=True)
class RiskTable:
    """Pooled event times with at-risk and event subject sets.

    ``at_risk[e, j]`` is True when subject j is still under follow-up at
    event time e (censoring time >= t, the closed-interval convention), and
    ``events[e, j]`` marks the subjects contributing an event at that time.
    """

    times: np.ndarray
    at_risk: np.ndarray
    events: np.ndarray
    subject_ids: tuple[str, ...]

    @property
    def event_counts(self) -> np.ndarray:
        return self.events.sum(axis=1)


def covariate_values(subject: Subject, name: str, times: np.ndarray) -> np.ndarray:
    """Evaluate one covariate of one subject at an array of times."""
    series = subject.series.get(name)
    if series is not None:
        return series.values_at(times)
    if name in subject.baseline:
        return np.full(np.shape(times), float(subject.baseline[name]))
    raise KeyError(f"subject {subject.id} has no covariate {name!r}")


def covariate_at(subject: Subject, name: str, t: float, *, tau: float = np.inf) -> float:
    """Covariate value at a single time, validating 0 <= t <= tau.

    Closed-form log series additionally reject t = 0, where they are
    undefined.
    """
    t = float(t)
    if not np.isfinite(t) or t < 0 or t > tau:
        raise ValueError(f"t={t} outside the study window [0, {tau}]")
    return float(covariate_values(subject, name, np.array([t]))[0])


def stacked(panel: Panel) -> StackedObservations:
    """Concatenate every subject's observation rows in panel order."""
    idx = np.concatenate(
        [np.full(s.n_obs, k, dtype=np.intp) for k, s in enumerate(panel.subjects)]
    ) if panel.n_observations else np.empty(0, dtype=np.intp)
    times = np.concatenate([s.obs_times for s in panel.subjects])
    outcomes = np.concatenate([s.outcomes for s in panel.subjects])
    return StackedObservations(idx, panel.ids, times, outcomes)


def risk_table(panel: Panel, event_source: str = "observation") -> RiskTable:
    """Build the pooled event-time table for PH model fitting.

    Parameters
    ----------
    panel : Panel
    event_source : {"observation", "censoring"}
        "observation" pools every subject's observation times (recurrent
        events). "censoring" pools end-of-follow-up times strictly inside
        the window; administrative censoring at tau is not an event.

    Returns
    -------
    RiskTable

    Raises
    ------
    DataError
        If the requested source has no events at all.
    """
    if event_source not in ("observation", "censoring"):
        raise ValueError(f"unknown event source {event_source!r}")
    n = panel.n_subjects
    censor = panel.censor_times()
    if event_source == "observation":
        per_subject = [s.obs_times for s in panel.subjects]
    else:
        per_subject = [
            np.array([s.censor_time]) if s.censor_time < panel.tau else np.empty(0)
            for s in panel.subjects
        ]
    pooled = np.concatenate(per_subject) if per_subject else np.empty(0)
    if pooled.size == 0:
        raise DataError(f"no {event_source} events in panel")
    times = np.unique(pooled)
    events = np.zeros((times.size, n), dtype=bool)
    for j, tj in enumerate(per_subject):
        if tj.size:
            events[np.searchsorted(times, tj), j] = True
    at_risk = censor[None, :] >= times[:, None]
    return RiskTable(times=times, at_risk=at_risk, events=events, subject_ids=panel.ids)


def _group_records(
    records: Iterable[Mapping[str, object]],
    id_col: str,
    time_col: str,
    outcome_col: str,
) -> tuple[list[str], dict[str, list], list[str]]:
    order: list[str] = []
    by_id: dict[str, list] = {}
    cov_names: list[str] | None = None
    for rec in records:
        if id_col not in rec or time_col not in rec or outcome_col not in rec:
            raise DataError(f"record missing one of {id_col!r}, {time_col!r}, {outcome_col!r}")
        extras = [k for k in rec.keys() if k not in (id_col, time_col, outcome_col)]
        if cov_names is None:
            cov_names = extras
        elif set(extras) != set(cov_names):
            raise DataError("ragged covariate columns across observation records")
        sid = str(rec[id_col])
        if sid not in by_id:
            by_id[sid] = []
            order.append(sid)
        try:
            by_id[sid].append(
                (
                    float(rec[time_col]),  # type: ignore[arg-type]
                    float(rec[outcome_col]),  # type: ignore[arg-type]
                    {k: float(rec[k]) for k in cov_names},  # type: ignore[arg-type]
                )
            )
        except (TypeError, ValueError) as exc:
            raise DataError(f"subject {sid}: unparseable observation record: {exc}") from exc
    return order, by_id, cov_names or []


def build_panel(
    obs_records: Sequence[Mapping[str, object]],
    subject_records: Sequence[Mapping[str, object]] | None = None,
    *,
    tau: float | None = None,
    fill: float = 0.0,
    id_col: str = "id",
    time_col: str = "time",
    outcome_col: str = "outcome",
    censor_col: str = "censor_time",
) -> Panel:
    """Assemble a Panel from long-format observation records.

    Parameters
    ----------
    obs_records : sequence of mappings
        One mapping per observation with at least id, time and outcome
        entries. Any further columns become time-varying covariates, kept as
        last-observation-carried-forward step series with ``fill`` before
        the first knot. A column whose value is constant within every
        subject is promoted to a baseline covariate instead.
    subject_records : sequence of mappings, optional
        One mapping per subject carrying the censoring time and baseline
        covariates. Subjects listed here with no observation records are
        kept (they still contribute to risk sets and baseline model fits).
        When omitted, or when the censoring column is absent, each
        subject's last observation time is used as a surrogate censoring
        time.
    tau : float, optional
        End of the study window. Defaults to the maximum of all censoring
        and observation times.
    fill : float
        Value returned by reconstructed step series before their first knot.

    Raises
    ------
    DataError
        On duplicated (id, time) pairs, ragged columns, unknown ids, or
        clashes between baseline and time-varying names.
    """
    order, by_id, cov_names = _group_records(obs_records, id_col, time_col, outcome_col)

    subj_info: dict[str, tuple[float | None, dict[str, float]]] = {}
    subj_order: list[str] = []
    base_names: set[str] = set()
    if subject_records is not None:
        for rec in subject_records:
            if id_col not in rec:
                raise DataError(f"subject record missing {id_col!r}")
            sid = str(rec[id_col])
            if sid in subj_info:
                raise DataError(f"duplicate subject record for id {sid}")
            # empty cells mean "baseline unknown for this subject"
            extras = {
                k: v
                for k, v in rec.items()
                if k not in (id_col, censor_col) and v is not None and v != ""
            }
            base_names |= set(extras)
            raw_cens = rec.get(censor_col)
            try:
                cens = None if raw_cens in (None, "") else float(raw_cens)  # type: ignore[arg-type]
                subj_info[sid] = (cens, {k: float(v) for k, v in extras.items()})  # type: ignore[arg-type]
            except (TypeError, ValueError) as exc:
                raise DataError(f"subject {sid}: unparseable subject record: {exc}") from exc
            subj_order.append(sid)
        unknown = [sid for sid in order if sid not in subj_info]
        if unknown:
            raise DataError(f"observation ids missing from subject records: {unknown[:5]}")
        ids = subj_order
    else:
        ids = order

    clash = set(base_names) & set(cov_names)
    if clash:
        raise DataError(f"columns appear as both baseline and time-varying: {sorted(clash)}")

    # A long column is promoted to baseline only when constant inside every
    # subject that has records; otherwise it stays a step series for all.
    promote: set[str] = set()
    for name in cov_names:
        if all(
            len({rec[2][name] for rec in recs}) <= 1 for recs in by_id.values()
        ):
            promote.add(name)

    subjects = []
    for sid in ids:
        recs = sorted(by_id.get(sid, []), key=lambda r: r[0])
        times = np.array([r[0] for r in recs])
        if times.size > 1 and np.any(np.diff(times) == 0):
            raise DataError(f"subject {sid}: duplicated observation times")
        outcomes = np.array([r[1] for r in recs])
        cens, baseline = subj_info.get(sid, (None, {}))
        baseline = dict(baseline)
        series: dict[str, CovariateSeries] = {}
        for name in cov_names:
            vals = [r[2][name] for r in recs]
            if name in promote:
                if vals:
                    baseline[name] = vals[0]
            else:
                series[name] = StepSeries(tuple(times), tuple(vals), fill=fill)
        if cens is None:
            cens = float(times[-1]) if times.size else 0.0
        subjects.append(
            Subject(
                id=sid,
                obs_times=times,
                outcomes=outcomes,
                censor_time=cens,
                baseline=baseline,
                series=series,
            )
        )

    if tau is None:
        hi = [s.censor_time for s in subjects] + [
            float(s.obs_times[-1]) for s in subjects if s.n_obs
        ]
        tau = max(hi) if hi else 0.0
        if tau <= 0:
            raise DataError("cannot infer a positive tau from the records")
    return Panel(subjects=tuple(subjects), tau=float(tau))


def _fmt(x: float) -> str:
    # repr round-trips doubles exactly and is byte-stable across runs
    return repr(float(x))


def write_panel_csv(panel: Panel, observations_path: str, subjects_path: str) -> None:
    """Write a panel as a pair of CSV files.

    The observations file holds ``id,time,outcome`` plus every time-varying
    covariate materialized at the subject's own observation times; the
    subjects file holds ``id,censor_time`` plus baseline covariates. Floats
    are written with full round-trip precision.
    """
    series_names = sorted({n for s in panel.subjects for n in s.series})
    base_names = sorted({n for s in panel.subjects for n in s.baseline})
    for s in panel.subjects:
        if s.n_obs and sorted(s.series) != series_names:
            raise DataError(f"subject {s.id}: missing time-varying columns for CSV export")

    with open(observations_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "time", "outcome", *series_names])
        for s in panel.subjects:
            cols = [s.series[n].values_at(s.obs_times) for n in series_names]
            for k in range(s.n_obs):
                w.writerow(
                    [s.id, _fmt(s.obs_times[k]), _fmt(s.outcomes[k])]
                    + [_fmt(c[k]) for c in cols]
                )
    with open(subjects_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "censor_time", *base_names])
        for s in panel.subjects:
            w.writerow(
                [s.id, _fmt(s.censor_time)]
                + [_fmt(s.baseline[n]) if n in s.baseline else "" for n in base_names]
            )


def read_panel_csv(
    observations_path: str,
    subjects_path: str | None = None,
    *,
    tau: float | None = None,
    fill: float = 0.0,
    id_col: str = "id",
    time_col: str = "time",
    outcome_col: str = "outcome",
    censor_col: str = "censor_time",
) -> Panel:
    """Read a panel from CSV files written by or compatible with write_panel_csv."""
    with open(observations_path, newline="") as fh:
        obs = list(csv.DictReader(fh))
    subj = None
    if subjects_path is not None:
        with open(subjects_path, newline="") as fh:
            subj = list(csv.DictReader(fh))
    return build_panel(
        obs,
        subj,
        tau=tau,
        fill=fill,
        id_col=id_col,
        time_col=time_col,
        outcome_col=outcome_col,
        censor_col=censor_col,
    )


def with_history_series(
    panel: Panel,
    *,
    lagged_outcome: str | None = None,
    prior_count: str | None = None,
    fill: float = 0.0,
) -> Panel:
    """Attach derived history processes as strictly-lagged step series.

    ``lagged_outcome`` holds the outcome at the subject's most recent visit
    strictly before t; ``prior_count`` holds the number of visits strictly
    before t. Both equal ``fill`` (respectively 0) before the first visit.
    """
    if lagged_outcome is None and prior_count is None:
        return panel
    subjects = []
    for s in panel.subjects:
        series = dict(s.series)
        for name in (lagged_outcome, prior_count):
            if name is not None and (name in series or name in s.baseline):
                raise DataError(f"derived series name {name!r} already in use")
        if lagged_outcome is not None:
            series[lagged_outcome] = StepSeries(
                tuple(s.obs_times), tuple(s.outcomes), fill=fill, strictly_before=True
            )
        if prior_count is not None:
            series[prior_count] = StepSeries(
                tuple(s.obs_times),
                tuple(float(k + 1) for k in range(s.n_obs)),
                fill=0.0,
                strictly_before=True,
            )
        subjects.append(
            Subject(s.id, s.obs_times, s.outcomes, s.censor_time, dict(s.baseline), series)
        )
    return Panel(subjects=tuple(subjects), tau=panel.tau)


def truncate_follow_up(panel: Panel, cutoff: float) -> Panel:
    """Administratively censor the panel at an earlier time.

    Observations after the cutoff are dropped, censoring times are clipped,
    and the study window shrinks to [0, cutoff].
    """
    if not (0 < cutoff <= panel.tau):
        raise DataError(f"cutoff must lie in (0, tau], got {cutoff}")
    subjects = []
    for s in panel.subjects:
        keep = s.obs_times <= cutoff
        subjects.append(
            Subject(
                s.id,
                s.obs_times[keep],
                s.outcomes[keep],
                min(s.censor_time, cutoff),
                dict(s.baseline),
                dict(s.series),
            )
        )
    return Panel(subjects=tuple(subjects), tau=float(cutoff))


def one_per_cluster(panel: Panel, column: str, rng: np.random.Generator) -> Panel:
    """Keep one uniformly chosen subject per cluster.

    ``column`` must be a baseline covariate naming the cluster. Panel order
    is preserved among the kept subjects, so the result is deterministic for
    a given generator state.
    """
    groups: dict[float, list[int]] = {}
    for k, s in enumerate(panel.subjects):
        if column not in s.baseline:
            raise DataError(f"subject {s.id} lacks cluster column {column!r}")
        groups.setdefault(s.baseline[column], []).append(k)
    keep = sorted(members[int(rng.integers(len(members)))] for members in groups.values())
    return Panel(subjects=tuple(panel.subjects[k] for k in keep), tau=panel.tau)
