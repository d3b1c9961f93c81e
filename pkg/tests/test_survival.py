import numpy as np
import pytest

from fiptiw import (
    ConvergenceError,
    DataError,
    RankError,
    build_panel,
    covariate_at,
)
from fiptiw.survival import (
    PhSpec,
    fit_censoring,
    fit_ph,
    log_partial_likelihood,
    ph_information,
    ph_score,
)


def _obs(id, time, **cov):
    rec = {"id": id, "time": time, "outcome": 0.0}
    rec.update(cov)
    return rec


# ---------------------------------------------------------------------------
# independent (loop-based) partial likelihood used as the oracle throughout


def _naive_logpl(panel, names, source, coefs):
    """Breslow log partial likelihood from first principles.

    ``coefs`` has shape (G, p); returns (G,). Pure python loops over events
    and risk sets, evaluating covariates through the public lookup.
    """
    coefs = np.atleast_2d(np.asarray(coefs, dtype=float))
    total = np.zeros(coefs.shape[0])
    for s in panel.subjects:
        if source == "observation":
            times = [float(t) for t in s.obs_times]
        else:
            times = [s.censor_time] if s.censor_time < panel.tau else []
        for t in times:
            zi = np.array([covariate_at(s, nm, t, tau=panel.tau) for nm in names])
            denom = np.zeros(coefs.shape[0])
            for o in panel.subjects:
                if o.censor_time >= t:
                    zo = np.array(
                        [covariate_at(o, nm, t, tau=panel.tau) for nm in names]
                    )
                    denom += np.exp(coefs @ zo)
            total += coefs @ zi - np.log(denom)
    return total


def _grid_argmax(panel, name, source, step=1e-4, lo=-5.0, hi=5.0):
    grid = np.arange(lo, hi + step / 2, step)
    vals = _naive_logpl(panel, (name,), source, grid[:, None])
    k = int(np.argmax(vals))
    assert 0 < k < grid.size - 1, "grid argmax sits on the boundary"
    return float(grid[k])


# ---------------------------------------------------------------------------
# fixed instances for the grid-search oracle


def _instance_binary_recurrent():
    subs = [
        {"id": "s1", "censor_time": 6.0, "x": 1.0},
        {"id": "s2", "censor_time": 4.0, "x": 1.0},
        {"id": "s3", "censor_time": 7.0, "x": 0.0},
        {"id": "s4", "censor_time": 2.0, "x": 0.0},
        {"id": "s5", "censor_time": 3.0, "x": 0.0},
    ]
    obs = [
        _obs("s1", 1.0),
        _obs("s1", 2.5),
        _obs("s1", 4.0),
        _obs("s2", 3.0),
        _obs("s3", 0.5),
        _obs("s3", 5.0),
        _obs("s4", 2.0),
    ]
    return build_panel(obs, subs, tau=7.0), "x", "observation"


def _instance_continuous_ties():
    subs = [
        {"id": "a", "censor_time": 5.0, "z": 0.2},
        {"id": "b", "censor_time": 3.5, "z": -1.0},
        {"id": "c", "censor_time": 6.0, "z": 0.7},
        {"id": "d", "censor_time": 2.0, "z": 1.5},
    ]
    obs = [
        _obs("a", 1.0),
        _obs("a", 3.0),
        _obs("b", 3.0),
        _obs("c", 2.0),
        _obs("d", 1.0),
    ]
    return build_panel(obs, subs, tau=7.0), "z", "observation"


def _instance_censoring():
    subs = [
        {"id": f"c{k}", "censor_time": ct, "w": w}
        for k, (ct, w) in enumerate(
            [(1.5, 0.9), (2.0, 0.1), (2.0, 0.6), (7.0, 0.3), (3.2, 0.8), (7.0, 0.5)]
        )
    ]
    return build_panel([], subs, tau=7.0), "w", "censoring"


def _instance_time_varying():
    subs = [{"id": f"t{k}", "censor_time": c} for k, c in enumerate([5.0, 6.0, 4.0, 7.0, 3.0])]
    obs = [
        _obs("t0", 1.0, x=0.0),
        _obs("t0", 2.0, x=1.0),
        _obs("t0", 4.5, x=1.0),
        _obs("t1", 2.0, x=0.5),
        _obs("t1", 5.5, x=-0.5),
        _obs("t2", 1.5, x=1.0),
        _obs("t3", 3.0, x=-1.0),
        _obs("t4", 2.5, x=0.5),
    ]
    return build_panel(obs, subs, tau=7.0), "x", "observation"


def _instance_heavy_ties():
    subs = [
        {"id": "h1", "censor_time": 4.0, "x": 1.0},
        {"id": "h2", "censor_time": 5.0, "x": 0.0},
        {"id": "h3", "censor_time": 7.0, "x": 0.5},
    ]
    obs = [_obs(i, t) for i in ("h1", "h2", "h3") for t in (1.0, 2.0)]
    obs += [_obs("h3", 3.0)]
    return build_panel(obs, subs, tau=7.0), "x", "observation"


ALL_INSTANCES = [
    _instance_binary_recurrent,
    _instance_continuous_ties,
    _instance_censoring,
    _instance_time_varying,
    _instance_heavy_ties,
]


@pytest.mark.parametrize("make", ALL_INSTANCES)
def test_fit_matches_grid_search(make):
    panel, name, source = make()
    fit = fit_ph(panel, PhSpec((name,), source))
    assert fit.converged
    best = _grid_argmax(panel, name, source)
    assert abs(float(fit.coef[0]) - best) <= 2e-4


@pytest.mark.parametrize("make", ALL_INSTANCES)
def test_logpl_engine_matches_naive(make):
    panel, name, source = make()
    for g in (-1.3, 0.0, 0.8):
        ours = log_partial_likelihood(panel, PhSpec((name,), source), np.array([g]))
        naive = _naive_logpl(panel, (name,), source, np.array([[g]]))[0]
        assert ours == pytest.approx(naive, rel=1e-12, abs=1e-12)


def test_logpl_at_zero_counts_risk_sets():
    panel, name, source = _instance_binary_recurrent()
    # at coef 0 each event contributes -log(risk set size)
    sizes = []
    for s in panel.subjects:
        for t in s.obs_times:
            sizes.append(sum(o.censor_time >= t for o in panel.subjects))
    expected = -np.sum(np.log(sizes))
    got = log_partial_likelihood(panel, PhSpec((name,), source), np.zeros(1))
    assert got == pytest.approx(expected, rel=1e-13)


def test_score_at_zero_is_event_minus_risk_mean():
    panel, name, source = _instance_continuous_ties()
    expected = 0.0
    for s in panel.subjects:
        for t in s.obs_times:
            t = float(t)
            zi = covariate_at(s, name, t, tau=panel.tau)
            at_risk = [
                covariate_at(o, name, t, tau=panel.tau)
                for o in panel.subjects
                if o.censor_time >= t
            ]
            expected += zi - np.mean(at_risk)
    got = ph_score(panel, PhSpec((name,), source), np.zeros(1))
    assert got[0] == pytest.approx(expected, rel=1e-12, abs=1e-12)


# ---------------------------------------------------------------------------
# finite differences


def _random_panel(rng, n=6, tau=7.0):
    while True:
        subs, obs = [], []
        total = 0
        for i in range(n):
            censor = float(rng.uniform(1.0, tau))
            k = int(rng.integers(0, 5))
            times = np.sort(rng.uniform(0.05, censor, size=k))
            subs.append(
                {
                    "id": f"s{i}",
                    "censor_time": censor,
                    "w": float(rng.uniform()),
                    "d": float(rng.integers(0, 2)),
                }
            )
            for t in times:
                obs.append(_obs(f"s{i}", float(t), z=float(rng.normal())))
            total += k
        if total >= 2:
            return build_panel(obs, subs, tau=tau)


def test_score_matches_central_finite_differences():
    rng = np.random.default_rng(20240817)
    names = ("d", "w", "z")
    spec = PhSpec(names, "observation")
    h = 1e-6
    for _ in range(20):
        panel = _random_panel(rng)
        coef = rng.uniform(-0.8, 0.8, size=3)
        score = ph_score(panel, spec, coef)
        for k in range(3):
            e = np.zeros(3)
            e[k] = h
            fd = (
                log_partial_likelihood(panel, spec, coef + e)
                - log_partial_likelihood(panel, spec, coef - e)
            ) / (2 * h)
            assert abs(fd - score[k]) <= 1e-5 * (1.0 + abs(score[k]))


def test_information_is_positive_semidefinite():
    rng = np.random.default_rng(7)
    spec = PhSpec(("d", "w", "z"), "observation")
    for _ in range(10):
        panel = _random_panel(rng)
        info = ph_information(panel, spec, rng.uniform(-0.5, 0.5, size=3))
        assert np.min(np.linalg.eigvalsh(info)) >= -1e-9


# ---------------------------------------------------------------------------
# invariances


def test_score_and_fit_invariant_to_covariate_shift():
    panel, name, source = _instance_continuous_ties()
    shifted_subs = [
        {"id": s.id, "censor_time": s.censor_time, "z": s.baseline["z"] + 100.0}
        for s in panel.subjects
    ]
    shifted_obs = [_obs(s.id, float(t)) for s in panel.subjects for t in s.obs_times]
    shifted = build_panel(shifted_obs, shifted_subs, tau=panel.tau)
    spec = PhSpec((name,), source)
    g = np.array([0.37])
    assert ph_score(shifted, spec, g)[0] == pytest.approx(
        ph_score(panel, spec, g)[0], abs=1e-7
    )
    assert fit_ph(shifted, spec).coef[0] == pytest.approx(
        fit_ph(panel, spec).coef[0], abs=1e-7
    )


def test_fit_equivariant_to_covariate_scale():
    panel, name, source = _instance_continuous_ties()
    base = fit_ph(panel, PhSpec((name,), source)).coef[0]
    for c in (0.5, 4.0):
        scaled_subs = [
            {"id": s.id, "censor_time": s.censor_time, "z": s.baseline["z"] * c}
            for s in panel.subjects
        ]
        scaled_obs = [_obs(s.id, float(t)) for s in panel.subjects for t in s.obs_times]
        scaled = build_panel(scaled_obs, scaled_subs, tau=panel.tau)
        got = fit_ph(scaled, PhSpec((name,), source)).coef[0]
        assert got == pytest.approx(base / c, rel=1e-6)


# ---------------------------------------------------------------------------
# degeneracies and failure modes


def test_single_subject_fits_at_zero():
    panel = build_panel(
        [_obs("only", 1.0), _obs("only", 2.0)],
        [{"id": "only", "censor_time": 5.0, "x": 1.3}],
        tau=7.0,
    )
    fit = fit_ph(panel, PhSpec(("x",), "observation"))
    assert fit.converged
    assert fit.iterations == 0
    assert fit.coef[0] == 0.0
    assert fit.degenerate == ("x",)


def test_constant_covariate_flagged_not_fatal():
    panel, name, source = _instance_continuous_ties()
    subs = [
        {"id": s.id, "censor_time": s.censor_time, "z": s.baseline["z"], "one": 2.0}
        for s in panel.subjects
    ]
    obs = [_obs(s.id, float(t)) for s in panel.subjects for t in s.obs_times]
    panel2 = build_panel(obs, subs, tau=panel.tau)
    fit = fit_ph(panel2, PhSpec(("z", "one"), source))
    assert fit.degenerate == ("one",)
    assert fit.coef[1] == 0.0
    solo = fit_ph(panel, PhSpec((name,), source))
    assert fit.coef[0] == pytest.approx(solo.coef[0], abs=1e-9)


def test_collinear_covariates_raise():
    panel, name, source = _instance_continuous_ties()
    subs = [
        {"id": s.id, "censor_time": s.censor_time, "z": s.baseline["z"], "z2": s.baseline["z"]}
        for s in panel.subjects
    ]
    obs = [_obs(s.id, float(t)) for s in panel.subjects for t in s.obs_times]
    panel2 = build_panel(obs, subs, tau=panel.tau)
    with pytest.raises(RankError):
        fit_ph(panel2, PhSpec(("z", "z2"), source))


def test_separating_covariate_reported_as_divergence():
    subs = [
        {"id": "ev", "censor_time": 7.0, "x": 1.0},
        {"id": "no", "censor_time": 7.0, "x": 0.0},
    ]
    obs = [_obs("ev", t) for t in (1.0, 2.0, 3.0)]
    panel = build_panel(obs, subs, tau=7.0)
    with pytest.raises(ConvergenceError, match="monotone"):
        fit_ph(panel, PhSpec(("x",), "observation"))


def test_no_censoring_events_errors():
    panel = build_panel(
        [_obs("a", 1.0)], [{"id": "a", "censor_time": 7.0, "w": 0.5}], tau=7.0
    )
    with pytest.raises(DataError):
        fit_censoring(panel, PhSpec(("w",), "censoring"))
    with pytest.raises(ValueError):
        fit_censoring(panel, PhSpec(("w",), "observation"))


# ---------------------------------------------------------------------------
# Breslow baseline


def test_breslow_baseline_null_model():
    subs = [
        {"id": "a", "censor_time": 1.0},
        {"id": "b", "censor_time": 2.0},
        {"id": "c", "censor_time": 7.0},
    ]
    panel = build_panel([], subs, tau=7.0)
    fit = fit_censoring(panel, PhSpec((), "censoring"))
    h = fit.baseline_cumulative_hazard
    assert h.values_at(np.array([0.5]))[0] == 0.0
    assert h.values_at(np.array([1.0]))[0] == pytest.approx(1 / 3)
    assert h.values_at(np.array([1.7]))[0] == pytest.approx(1 / 3)
    assert h.values_at(np.array([2.0]))[0] == pytest.approx(1 / 3 + 1 / 2)
    assert h.values_at(np.array([6.9]))[0] == pytest.approx(1 / 3 + 1 / 2)


def test_breslow_baseline_with_covariates_matches_loops():
    panel, name, source = _instance_censoring()
    fit = fit_censoring(panel, PhSpec((name,), "censoring"))
    eta = float(fit.coef[0])
    times = sorted({s.censor_time for s in panel.subjects if s.censor_time < panel.tau})
    expect = 0.0
    for t in times:
        d = sum(1 for s in panel.subjects if s.censor_time == t)
        denom = sum(
            np.exp(eta * s.baseline["w"]) for s in panel.subjects if s.censor_time >= t
        )
        expect += d / denom
        got = fit.baseline_cumulative_hazard.values_at(np.array([t]))[0]
        assert got == pytest.approx(expect, rel=1e-12)
    # non-decreasing step function starting at zero
    grid = np.linspace(0, panel.tau, 50)
    vals = fit.baseline_cumulative_hazard.values_at(grid)
    assert vals[0] == 0.0
    assert np.all(np.diff(vals) >= 0)


def test_null_model_fit_is_trivially_converged():
    panel, name, source = _instance_binary_recurrent()
    fit = fit_ph(panel, PhSpec((), "observation"))
    assert fit.converged and fit.iterations == 0 and fit.coef.size == 0
    assert np.isfinite(fit.log_partial_likelihood)


# ---------------------------------------------------------------------------
# the suffix-sum shortcut for time-fixed covariates must agree with the
# dense per-event computation on the same design


def test_invariant_shortcut_matches_dense_path():
    from fiptiw.survival import build_risk_design

    rng = np.random.default_rng(2211)
    for _ in range(10):
        panel = _random_panel(rng)
        design = build_risk_design(panel, ("d", "w"), "observation")
        assert design._fast
        coef = rng.uniform(-0.9, 0.9, size=2)
        ll_f, score_f, info_f = design.stats(coef)
        design._fast = False
        ll_s, score_s, info_s = design.stats(coef)
        assert ll_f == pytest.approx(ll_s, rel=1e-11)
        np.testing.assert_allclose(score_f, score_s, rtol=1e-10, atol=1e-10)
        np.testing.assert_allclose(info_f, info_s, rtol=1e-10, atol=1e-10)


def test_invariant_shortcut_degeneracy_scan_matches_dense():
    from fiptiw.survival import build_risk_design

    rng = np.random.default_rng(9)
    for _ in range(6):
        panel = _random_panel(rng)
        design = build_risk_design(panel, ("d", "w"), "observation")
        flags_fast = design.structurally_degenerate()
        design._fast = False
        np.testing.assert_array_equal(flags_fast, design.structurally_degenerate())


def test_subset_views_agree_with_full_design():
    from fiptiw.survival import build_risk_design, fit_ph_design

    rng = np.random.default_rng(404)
    panel = _random_panel(rng, n=8)
    full = build_risk_design(panel, ("d", "w", "z"), "observation")
    for names in [("d",), ("w",), ("d", "w"), ("d", "z"), ("z",)]:
        sub = full.subset(names)
        direct = build_risk_design(panel, names, "observation")
        coef = rng.uniform(-0.5, 0.5, size=len(names))
        for a, b in zip(sub.stats(coef), direct.stats(coef)):
            np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)
        fit_sub = fit_ph_design(sub)
        fit_dir = fit_ph_design(direct)
        np.testing.assert_allclose(fit_sub.coef, fit_dir.coef, rtol=1e-9, atol=1e-10)
