import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fiptiw.errors import DataError, PositivityError, RankError, SeparationError
from fiptiw.panel import build_panel, stacked
from fiptiw.survival import FittedIntensity, PhSpec, fit_censoring, fit_ph
from fiptiw.weights import (
    FittedPropensity,
    WeightSet,
    combine,
    fit_propensity,
    iiw_weights,
    ipcw_weights,
    iptw_weights,
    trim,
)

from test_survival import _obs, _random_panel


def _toy_set(values, kind="IIW"):
    values = np.asarray(values, dtype=float)
    n = values.size
    return WeightSet(
        kind=kind,
        ids=("a",),
        subject_index=np.zeros(n, dtype=np.intp),
        times=np.arange(n, dtype=float),
        values=values,
        factors=frozenset({kind}),
    )


def _brute_quantile(values, p):
    # linear interpolation between order statistics, h = (n-1)p + 1
    xs = sorted(float(v) for v in values)
    h = (len(xs) - 1) * p + 1
    j = int(math.floor(h))
    g = h - j
    if j >= len(xs):
        return xs[-1]
    return xs[j - 1] + g * (xs[j] - xs[j - 1])


# ---------------------------------------------------------------- trimming


def test_trim_worked_example():
    rng = np.random.default_rng(5)
    values = rng.permutation(np.arange(1.0, 101.0))
    ws = _toy_set(values)
    out = trim(ws, 0.95)
    assert out.trim.threshold == pytest.approx(95.05, abs=1e-12)
    assert out.trim.threshold == pytest.approx(_brute_quantile(values, 0.95), abs=1e-12)
    assert out.trim.n_trimmed == 5
    assert out.trim.percentile == 0.95
    assert float(out.values.max()) == pytest.approx(95.05, abs=1e-12)
    untouched = values <= 95.05
    assert np.array_equal(out.values[untouched], values[untouched])
    assert np.all(out.values[~untouched] == out.trim.threshold)
    assert np.array_equal(out.trimmed, ~untouched)


def test_trim_p_one_is_identity():
    values = np.array([0.2, 7.0, 1.0, 3.5])
    out = trim(_toy_set(values), 1.0)
    assert np.array_equal(out.values, values)
    assert out.trim.n_trimmed == 0
    assert out.trim.threshold == 7.0


def test_trim_constant_entries_noop():
    for p in (0.5, 0.77, 1.0):
        out = trim(_toy_set(np.full(9, 2.5)), p)
        assert np.all(out.values == 2.5)
        assert out.trim.n_trimmed == 0


def test_trim_idempotent():
    ws = _toy_set(np.arange(1.0, 101.0))
    once = trim(ws, 0.95)
    twice = trim(once, 0.95)
    assert twice is once


def test_trim_stage_follows_combination():
    atomic = trim(_toy_set(np.arange(1.0, 11.0), kind="IPTW"), 0.9)
    assert atomic.trim.stage == "before"
    pair = combine([_toy_set(np.arange(1.0, 11.0)), _toy_set(np.arange(1.0, 11.0), kind="IPTW")])
    assert trim(pair, 0.9).trim.stage == "after"


def test_trim_rejects_out_of_range_percentile():
    ws = _toy_set([1.0, 2.0])
    with pytest.raises(ValueError):
        trim(ws, 0.49)
    with pytest.raises(ValueError):
        trim(ws, 1.01)


@settings(max_examples=80, deadline=None)
@given(
    values=st.lists(st.floats(0.01, 1e6), min_size=1, max_size=60),
    p=st.floats(0.5, 1.0),
)
def test_trim_properties(values, p):
    ws = _toy_set(values)
    out = trim(ws, p)
    assert out.trim.threshold == pytest.approx(_brute_quantile(values, p), rel=1e-12)
    assert np.all(out.values <= ws.values + 0.0)
    assert np.all(out.values <= out.trim.threshold * (1 + 1e-15))
    keep = ws.values <= out.trim.threshold
    assert np.array_equal(out.values[keep], ws.values[keep])
    assert out.trim.n_trimmed == int((~keep).sum())


# ---------------------------------------------------------------- propensity


def _flat_panel(d_values, w_values=None, extra=None):
    subs = []
    obs = []
    for i, d in enumerate(d_values):
        rec = {"id": f"s{i}", "censor_time": 3.0, "D": float(d)}
        if w_values is not None:
            rec["W"] = float(w_values[i])
        if extra is not None:
            rec.update({k: float(v[i]) for k, v in extra.items()})
        subs.append(rec)
        obs.append(_obs(f"s{i}", 1.0))
    return build_panel(obs, subs, tau=3.0)


def test_propensity_intercept_only_balanced():
    fit = fit_propensity(_flat_panel([0, 0, 1, 1]))
    assert fit.coef.shape == (1,)
    assert fit.coef[0] == 0.0
    assert np.all(fit.fitted == 0.5)
    assert fit.iterations == 0
    assert fit.converged


def test_propensity_all_treated_separates():
    with pytest.raises(SeparationError, match="treated"):
        fit_propensity(_flat_panel([1, 1, 1]))


def test_propensity_separating_covariate():
    x = [-2.0, -1.0, -0.5, 0.5, 1.0, 2.0]
    d = [0, 0, 0, 1, 1, 1]
    with pytest.raises(SeparationError):
        fit_propensity(_flat_panel(d, w_values=x), covariates=("W",))


def _sim_propensity_panel(seed=11, n=200):
    rng = np.random.default_rng(seed)
    w = rng.uniform(size=n)
    lp = -1.0 + w
    d = (rng.uniform(size=n) < 1.0 / (1.0 + np.exp(-lp))).astype(float)
    return _flat_panel(d, w_values=w), w, d


def _grid_logistic_argmax(design, y):
    """Coarse-to-fine alternating grid maximizer of the Bernoulli log
    likelihood over (intercept, slope); final grid step 1e-4."""
    center = np.zeros(2)
    for width, step in ((3.0, 0.05), (0.1, 0.002), (0.004, 1e-4)):
        a0 = np.arange(center[0] - width, center[0] + width + step / 2, step)
        a1 = np.arange(center[1] - width, center[1] + width + step / 2, step)
        grid = np.stack(np.meshgrid(a0, a1, indexing="ij"), axis=-1).reshape(-1, 2)
        lp = design @ grid.T
        ll = (y[:, None] * lp - np.logaddexp(0.0, lp)).sum(axis=0)
        k = int(np.argmax(ll))
        assert k % a1.size not in (0, a1.size - 1) and k // a1.size not in (0, a0.size - 1)
        center = grid[k]
    return center


def test_propensity_matches_grid_search_oracle():
    panel, w, d = _sim_propensity_panel()
    fit = fit_propensity(panel, covariates=("W",))
    design = np.column_stack([np.ones_like(w), w])
    oracle = _grid_logistic_argmax(design, d)
    assert np.max(np.abs(fit.coef - oracle)) <= 2e-4


def test_propensity_recovers_truth_within_monte_carlo_error():
    panel, w, d = _sim_propensity_panel()
    fit = fit_propensity(panel, covariates=("W",))
    design = np.column_stack([np.ones_like(w), w])
    info = (design * (fit.fitted * (1 - fit.fitted))[:, None]).T @ design
    se = np.sqrt(np.diag(np.linalg.inv(info)))
    assert np.all(np.abs(fit.coef - np.array([-1.0, 1.0])) <= 3 * se)


def test_propensity_score_identities():
    panel, w, d = _sim_propensity_panel(seed=23)
    fit = fit_propensity(panel, covariates=("W",))
    # intercept score: fitted probabilities reproduce the treated count
    assert abs(fit.fitted.sum() - d.sum()) <= 1e-7
    assert abs((w * (d - fit.fitted)).sum()) <= 1e-7


def test_inverse_probability_sum_exact_only_without_covariates():
    # intercept-only: pi is the sample mean, so sum(D/pi) = n exactly
    panel = _flat_panel([0, 1, 1, 0, 1, 1, 0, 1])
    fit = fit_propensity(panel)
    d = np.array([0, 1, 1, 0, 1, 1, 0, 1], dtype=float)
    assert (d / fit.fitted).sum() == pytest.approx(8.0, abs=1e-9)

    # with a covariate the sum is unbiased but not an identity; it lands
    # within sampling error of n rather than within solver tolerance
    panel, w, d = _sim_propensity_panel(seed=37)
    fit = fit_propensity(panel, covariates=("W",))
    ht = (d / fit.fitted).sum()
    mc_sd = math.sqrt(((1 - fit.fitted) / fit.fitted).sum())
    assert abs(ht - d.size) <= 3 * mc_sd


def test_propensity_collinear_covariates_raise():
    vals = [0.3, 0.8, 0.1, 0.9, 0.4, 0.6]
    panel = _flat_panel([0, 1, 0, 1, 0, 1], w_values=vals, extra={"W2": vals})
    with pytest.raises(RankError):
        fit_propensity(panel, covariates=("W", "W2"))


def test_propensity_rejects_nonbinary_treatment():
    with pytest.raises(DataError, match="0/1"):
        fit_propensity(_flat_panel([0.0, 0.5, 1.0]))


def test_propensity_requires_baseline_covariate():
    with pytest.raises(DataError, match="baseline"):
        fit_propensity(_flat_panel([0, 1, 0, 1]), covariates=("nope",))


# ---------------------------------------------------------------- IPTW


def _iptw_panel():
    subs = [
        {"id": "a", "censor_time": 3.0, "D": 1.0},
        {"id": "b", "censor_time": 3.0, "D": 0.0},
        {"id": "c", "censor_time": 3.0, "D": 0.0},
    ]
    obs = [_obs("a", 0.5), _obs("a", 1.5), _obs("b", 1.0)]
    return build_panel(obs, subs, tau=3.0)


def _manual_propensity(panel, fitted):
    return FittedPropensity(
        covariates=(),
        coef=np.zeros(1),
        ids=panel.ids,
        fitted=np.asarray(fitted, dtype=float),
        score=np.zeros(1),
        iterations=0,
        converged=True,
    )


def test_iptw_inverts_the_right_arm():
    panel = _iptw_panel()
    ws = iptw_weights(panel, _manual_propensity(panel, [0.5, 0.2, 0.2]))
    # a treated at pi=.5 -> 2 at both times; b control at pi=.2 -> 1.25
    assert np.allclose(ws.values, [2.0, 2.0, 1.25], rtol=0, atol=0)
    assert ws.kind == "IPTW"
    assert ws.factors == frozenset({"IPTW"})


def test_iptw_positivity_violation():
    panel = _iptw_panel()
    with pytest.raises(PositivityError):
        iptw_weights(panel, _manual_propensity(panel, [1e-13, 0.5, 0.5]))
    with pytest.raises(PositivityError):
        iptw_weights(panel, _manual_propensity(panel, [0.5, 1.0 - 1e-13, 0.5]))


def test_iptw_rejects_foreign_fit():
    panel = _iptw_panel()
    other = _flat_panel([0, 1])
    with pytest.raises(ValueError, match="different panel"):
        iptw_weights(panel, _manual_propensity(other, [0.5, 0.5]))


# ---------------------------------------------------------------- IIW


def _intensity(names, coef):
    p = len(names)
    return FittedIntensity(
        covariates=tuple(names),
        coef=np.asarray(coef, dtype=float),
        score=np.zeros(p),
        information=np.eye(p),
        log_partial_likelihood=0.0,
        iterations=1,
        converged=True,
    )


def test_iiw_null_coefficients_give_unit_weights():
    panel = _random_panel(np.random.default_rng(2), n=5)
    ws = iiw_weights(panel, _intensity(("d", "z"), [0.0, 0.0]))
    assert np.all(ws.values == 1.0)


def test_iiw_indicator_halves_weight():
    subs = [{"id": "a", "censor_time": 3.0, "g": 1.0}, {"id": "b", "censor_time": 3.0, "g": 0.0}]
    obs = [_obs("a", 1.0), _obs("b", 1.0)]
    panel = build_panel(obs, subs, tau=3.0)
    ws = iiw_weights(panel, _intensity(("g",), [math.log(2.0)]))
    assert ws.values[0] == pytest.approx(0.5, rel=1e-15)
    assert ws.values[1] == 1.0


def test_iiw_stabilized_with_identical_covariates_is_exactly_one():
    panel = _random_panel(np.random.default_rng(7), n=8)
    fit = fit_ph(panel, PhSpec(covariates=("d", "z")))
    ws = iiw_weights(panel, fit, numerator=fit)
    assert np.all(ws.values == 1.0)


def test_iiw_recomputation_oracle():
    panel = _random_panel(np.random.default_rng(13), n=10)
    den = _intensity(("d", "w", "z"), [0.4, -0.7, 0.25])
    num = _intensity(("d",), [0.3])
    ws = iiw_weights(panel, den, numerator=num)
    obs = stacked(panel)
    for k in range(ws.n_entries):
        subj = panel.subject(obs.ids[obs.subject_index[k]])
        t = obs.times[k]
        lp_den = sum(
            c * panel.covariate_at(subj.id, name, t)
            for name, c in zip(den.covariates, den.coef)
        )
        lp_num = 0.3 * panel.covariate_at(subj.id, "d", t)
        assert ws.values[k] == pytest.approx(math.exp(lp_num - lp_den), rel=1e-12)


def test_iiw_entries_align_with_stacked_panel():
    panel = _random_panel(np.random.default_rng(3), n=6)
    ws = iiw_weights(panel, _intensity(("z",), [0.5]))
    obs = stacked(panel)
    assert np.array_equal(ws.times, obs.times)
    assert np.array_equal(ws.subject_index, obs.subject_index)
    assert ws.ids == obs.ids
    assert ws.n_entries == panel.n_observations


def test_iiw_requires_converged_fit():
    panel = _random_panel(np.random.default_rng(4), n=5)
    bad = FittedIntensity(
        covariates=("z",),
        coef=np.array([0.5]),
        score=np.array([1.0]),
        information=np.eye(1),
        log_partial_likelihood=0.0,
        iterations=25,
        converged=False,
    )
    with pytest.raises(ValueError, match="converge"):
        iiw_weights(panel, bad)


# ---------------------------------------------------------------- IPCW


def _censor_panel():
    subs = [
        {"id": "a", "censor_time": 1.0, "x": 0.0},
        {"id": "b", "censor_time": 2.0, "x": 1.0},
        {"id": "c", "censor_time": 7.0, "x": 2.0},
    ]
    obs = []
    for sid, times in (("a", (0.5,)), ("b", (0.5, 1.5)), ("c", (0.5, 1.5, 2.5))):
        for t in times:
            obs.append(_obs(sid, t))
    return build_panel(obs, subs, tau=7.0)


def test_ipcw_null_model_inverts_breslow_survival():
    panel = _censor_panel()
    fit = fit_censoring(panel, PhSpec(covariates=(), event_source="censoring"))
    ws = ipcw_weights(panel, fit)
    # censoring events at t=1 (3 at risk) and t=2 (2 at risk):
    # cumulative baseline 1/3 then 1/3 + 1/2
    expected = [
        1.0,  # a @ .5
        1.0,  # b @ .5
        math.exp(1.0 / 3.0),  # b @ 1.5
        1.0,  # c @ .5
        math.exp(1.0 / 3.0),  # c @ 1.5
        math.exp(1.0 / 3.0 + 1.0 / 2.0),  # c @ 2.5
    ]
    assert np.allclose(ws.values, expected, rtol=1e-12)
    assert ws.kind == "IPCW"


def test_ipcw_recomputation_oracle():
    # censoring order must not be monotone in x or the hazard fit diverges
    subs = [
        {"id": "a", "censor_time": 1.0, "x": 1.0},
        {"id": "b", "censor_time": 2.0, "x": 0.0},
        {"id": "c", "censor_time": 2.5, "x": 1.5},
        {"id": "d", "censor_time": 7.0, "x": 0.5},
    ]
    obs = []
    for sid, times in (
        ("a", (0.5,)),
        ("b", (0.5, 1.5)),
        ("c", (0.5, 2.2)),
        ("d", (0.5, 1.5, 2.5, 4.0)),
    ):
        for t in times:
            obs.append(_obs(sid, t))
    panel = build_panel(obs, subs, tau=7.0)
    fit = fit_censoring(panel, PhSpec(covariates=("x",), event_source="censoring"))
    ws = ipcw_weights(panel, fit)
    base = fit.baseline_cumulative_hazard
    knots, cum = list(base.knots), list(base.values)
    k = 0
    obs = stacked(panel)
    for i in range(ws.n_entries):
        subj = panel.subject(obs.ids[obs.subject_index[i]])
        t = obs.times[i]
        h0 = 0.0
        for knot, value in zip(knots, cum):  # plain scan instead of searchsorted
            if knot <= t:
                h0 = value
        surv = math.exp(-h0 * math.exp(fit.coef[0] * subj.baseline["x"]))
        assert ws.values[i] == pytest.approx(1.0 / surv, rel=1e-12)
        k += 1
    assert k == panel.n_observations


def test_ipcw_unit_weight_before_first_censoring_event():
    panel = _censor_panel()
    fit = fit_censoring(panel, PhSpec(covariates=(), event_source="censoring"))
    ws = ipcw_weights(panel, fit)
    early = ws.times < 1.0
    assert np.all(ws.values[early] == 1.0)


def test_ipcw_survival_floor():
    from dataclasses import replace as dc_replace

    panel = _censor_panel()
    fit = fit_censoring(panel, PhSpec(covariates=(), event_source="censoring"))
    boosted = dc_replace(fit, coef=np.array([25.0]), covariates=("x",))
    with pytest.raises(PositivityError, match="survival"):
        ipcw_weights(panel, boosted)


def test_ipcw_rejects_time_varying_covariate():
    from dataclasses import replace as dc_replace

    panel = _random_panel(np.random.default_rng(21), n=6)
    fit = fit_censoring(panel, PhSpec(covariates=("w",), event_source="censoring"))
    bad = dc_replace(fit, covariates=("z",), coef=np.array([0.1]))
    with pytest.raises(DataError, match="time-fixed"):
        ipcw_weights(panel, bad)


# ---------------------------------------------------------------- combine


def _triple(seed=17, n=25):
    rng = np.random.default_rng(seed)
    sets = []
    for kind in ("IIW", "IPTW", "IPCW"):
        sets.append(_toy_set(np.exp(rng.normal(size=n)), kind=kind))
    return sets


def test_combine_is_the_bitwise_product():
    a, b, c = _triple()
    pair = combine([a, b])
    assert pair.kind == "FIPTIW"
    assert pair.factors == frozenset({"IIW", "IPTW"})
    assert np.array_equal(pair.values, a.values * b.values)
    full = combine([a, b, c])
    assert full.kind == "FIPTICW"
    assert np.array_equal(full.values, a.values * b.values * c.values)


def test_combine_single_set_relabels():
    a, _, _ = _triple()
    out = combine([a])
    assert out.kind == "IIW"
    assert np.array_equal(out.values, a.values)


def test_combine_commutative_and_associative():
    a, b, c = _triple(seed=29)
    orders = [combine([a, b, c]), combine([c, a, b]), combine([b, c, a])]
    nested = combine([combine([a, b]), c])
    for other in orders[1:] + [nested]:
        assert np.allclose(orders[0].values, other.values, rtol=1e-15)


def test_combine_rejects_misaligned_and_unnamed():
    a, b, c = _triple()
    shifted = _toy_set(b.values, kind="IPTW")
    object.__setattr__(shifted, "times", shifted.times + 0.5)
    with pytest.raises(ValueError, match="keyed"):
        combine([a, shifted])
    with pytest.raises(ValueError, match="duplicate"):
        combine([a, _toy_set(np.ones(25))])
    with pytest.raises(ValueError, match="no named weight kind"):
        combine([b, c])  # IPTW*IPCW has no name without IIW
    with pytest.raises(ValueError):
        combine([])


def test_weightset_validation():
    with pytest.raises(ValueError, match="positive"):
        _toy_set([1.0, -2.0])
    with pytest.raises(ValueError, match="positive"):
        _toy_set([1.0, np.inf])
    with pytest.raises(ValueError, match="factors"):
        WeightSet(
            kind="FIPTIW",
            ids=("a",),
            subject_index=np.zeros(1, dtype=np.intp),
            times=np.zeros(1),
            values=np.ones(1),
            factors=frozenset({"IIW"}),
        )


def test_entry_ids_map_back_to_subjects():
    panel = _iptw_panel()
    ws = iptw_weights(panel, _manual_propensity(panel, [0.5, 0.5, 0.5]))
    assert ws.entry_ids() == ("a", "a", "b")
