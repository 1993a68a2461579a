import json
import math

import numpy as np
import pytest
from scipy import stats

from coxcp.search import SearchConfig, search
from coxcp.simulation import (
    ConfigError,
    RandomTruthSpec,
    TruthSpec,
    bias_experiment,
    calibrate_n_for_events,
    event_probability,
    generate_dataset,
    kl_risk,
    load_experiment_config,
    run_experiment,
    selection_experiment,
    tic_experiment,
)

TWO_SEG = TruthSpec(m_star=1, hazard_ratios=(2.0, 0.5), alpha=0.5, horizon_quantile=1.0)


def _cum_hazard(truth, t, z):
    edges = (0.0,) + truth.changepoints + (math.inf,)
    out = np.zeros_like(t)
    for j, (a, b) in enumerate(zip(edges, edges[1:])):
        out += truth.baseline_rate * np.exp(truth.betas[j, 0] * z) * np.clip(t - a, 0, b - a)
    return out


def test_changepoint_from_alpha():
    assert TWO_SEG.changepoints == (pytest.approx(math.log(2.0)),)
    t = TruthSpec(m_star=2, hazard_ratios=(1, 2, 1), alpha=(0.25, 0.75), baseline_rate=2.0)
    assert t.changepoints == pytest.approx((math.log(4 / 3) / 2, math.log(4) / 2))
    assert TruthSpec(0, (1.0,)).follow_up == pytest.approx(-math.log(0.05))


def test_event_times_follow_the_truth():
    ds = generate_dataset(TWO_SEG, 10_000, 42)
    assert ds.n_events == 10_000
    e = _cum_hazard(TWO_SEG, ds.times, ds.Z[:, 0])
    assert stats.kstest(e, "expon").pvalue > 0.01


def test_inverse_transform_matches_thinning():
    truth = TruthSpec(m_star=1, hazard_ratios=(3.0, 0.5), k_star=(0.3,), horizon_quantile=1.0)
    rng = np.random.default_rng(5)
    n = 4000
    z = rng.integers(0, 2, n).astype(float)
    lam_max = 3.0
    out = np.empty(n)
    for i in range(n):
        t = 0.0
        while True:
            t += rng.exponential(1 / lam_max)
            beta = truth.betas[0 if t < 0.3 else 1, 0]
            if rng.random() < math.exp(beta * z[i]) / lam_max:
                out[i] = t
                break
    gen = generate_dataset(truth, n, 6)
    for v in (0.0, 1.0):
        a = gen.times[gen.Z[:, 0] == v]
        assert stats.ks_2samp(a, out[z == v]).pvalue > 0.01


def test_censoring_and_calibration():
    null = TruthSpec(0, (1.0,), horizon_quantile=1.0, target_events=100)
    assert event_probability(null) == 1.0 and calibrate_n_for_events(null) == 100
    half = TruthSpec(0, (1.0,), horizon_quantile=0.5, target_events=100)
    assert calibrate_n_for_events(half) == 200
    ds = generate_dataset(half, 20_000, 1)
    assert abs(ds.n_events / 20_000 - 0.5) < 0.02
    assert ds.times.max() <= half.follow_up
    normal = TruthSpec(1, (1.0, 2.0), alpha=0.3, covariate_law="standard_normal")
    big = generate_dataset(normal, 40_000, 2)
    assert abs(big.n_events / 40_000 - event_probability(normal)) < 0.01
    with pytest.raises(ConfigError):
        calibrate_n_for_events(null, 5)


def test_kl_risk_zero_at_truth_and_growing_along_a_ray():
    truth = TruthSpec(1, (1.0, 0.5), alpha=0.5)
    kl0 = kl_risk(truth, (truth.changepoints, truth.betas), replicates=20, seed=1)
    assert kl0["mean"] == 0.0
    vals = [kl_risk(truth, (truth.changepoints, truth.betas + s * np.array([[1.0], [-1.0]])), replicates=40, seed=1)["mean"]
            for s in (0.25, 0.5, 1.0, 2.0)]
    assert all(a < b for a, b in zip(vals, vals[1:])) and vals[0] > 0


def test_kl_of_fitted_model_is_positive():
    truth = TruthSpec(1, (1.0, 0.5), alpha=0.5)
    ds = generate_dataset(truth, calibrate_n_for_events(truth), 3)
    fit = search(ds, 1, 0.0, SearchConfig(min_event_fraction=0.1))
    assert kl_risk(truth, fit, replicates=30, seed=4)["mean"] > 0


def test_generation_is_reproducible():
    a = generate_dataset(TWO_SEG, 50, [7, 1])
    b = generate_dataset(TWO_SEG, 50, [7, 1])
    c = generate_dataset(TWO_SEG, 50, [7, 2])
    assert np.array_equal(a.times, b.times) and not np.array_equal(a.times, c.times)


def test_truth_validation():
    bad = [
        dict(m_star=1, hazard_ratios=(1.0,), alpha=0.5),
        dict(m_star=1, hazard_ratios=(1.0, 1.0), alpha=0.5),
        dict(m_star=1, hazard_ratios=(1.0, 2.0)),
        dict(m_star=1, hazard_ratios=(1.0, 2.0), alpha=1.5),
        dict(m_star=2, hazard_ratios=(1.0, 2.0, 1.0), k_star=(0.5, 0.4)),
        dict(m_star=1, hazard_ratios=(1.0, 2.0), alpha=0.99),
        dict(m_star=0, hazard_ratios=(-1.0,)),
        dict(m_star=0, hazard_ratios=(1.0,), covariate_law="poisson"),
    ]
    for kw in bad:
        with pytest.raises(ConfigError):
            TruthSpec(**kw)
    with pytest.raises(ConfigError):
        RandomTruthSpec(psi=0.0)


def test_random_truth_draws():
    spec = RandomTruthSpec(psi=0.5)
    rng = np.random.default_rng(0)
    for _ in range(200):
        t = spec.draw(rng)
        r = abs(math.log2(t.hazard_ratios[1] / t.hazard_ratios[0]))
        assert 0.5 <= r <= 1.5
        assert -math.log(0.9) <= t.changepoints[0] <= -math.log(0.1)


def test_small_experiments_are_reproducible_and_sane():
    truth = TruthSpec(1, (1.0, 0.5), alpha=0.5, target_events=60)
    cfg = SearchConfig(min_event_fraction=0.1)
    a = bias_experiment(truth, 4, seed=9, search_config=cfg)
    b = bias_experiment(truth, 4, seed=9, search_config=cfg)
    assert a.to_json() == b.to_json()
    assert a.cells["bias"]["aic_prediction"] == 5.0 and a.cells["bias"]["naive_prediction"] == 3.0
    sel = selection_experiment(TruthSpec(0, (1.0,), target_events=60), m_max=2, replicates=3, seed=1,
                               kl_replicates=5, search_config=cfg)
    assert sum(sel.cells["aic"]["counts"]) == 3
    assert sel.to_csv().splitlines()[0] == "criterion,kl_mean,kl_se,pct_m0,pct_m1,pct_m2"
    rsel = selection_experiment(RandomTruthSpec(psi=1.0, target_events=60), m_max=1, replicates=2, seed=1,
                                kl_replicates=3, search_config=cfg)
    assert len(rsel.replicate_rows) == 2
    t = tic_experiment(TruthSpec(0, (2.0,), target_events=60), replicates=3, seed=2)
    assert set(t.cells["tic_minus_aic"]) == {"mean", "se", "n"}
    with pytest.raises(ConfigError):
        selection_experiment(truth, criteria=("aic_xi",), replicates=1)


CFG = """
[experiment]
kind = tic
replicates = 2
seed = 3

[truth]
m_star = 0
hazard_ratios = 2.0
target_events = 40
"""


def test_config_round_trip(tmp_path):
    cfg = load_experiment_config(CFG, {"experiment.replicates": "3"})
    assert cfg["experiment"]["replicates"] == 3 and cfg["truth"]["hazard_ratios"] == (2.0,)
    rep = run_experiment(cfg)
    path = tmp_path / "r.json"
    path.write_text(rep.to_json())
    again = run_experiment(load_experiment_config(str(path)))
    assert again.to_json() == rep.to_json()
    assert json.loads(rep.to_json())["config"]["truth"]["hazard_ratios"] == [2.0]


@pytest.mark.parametrize("text,match", [
    ("[experiment]\nkind = nope\n", "kind"),
    ("[experiment]\nkind = bias\n[truth]\nm_star = x\n", "not a valid int"),
    ("[experiment]\nkind = bias\n[weird]\na = 1\n", "unknown config section"),
    ("[experiment]\nkind = bias\nfoo = 1\n", "unknown key"),
])
def test_config_errors(text, match):
    with pytest.raises(ConfigError, match=match):
        load_experiment_config(text)


def test_config_semantic_errors():
    with pytest.raises(ConfigError, match="m_star"):
        run_experiment(load_experiment_config("[experiment]\nkind = bias\n[truth]\nalpha = 0.5\n"))
    with pytest.raises(ConfigError, match="selection"):
        run_experiment(load_experiment_config("[experiment]\nkind = bias\n[truth]\nrandom = yes\npsi = 1\n"))
    with pytest.raises(ConfigError):
        run_experiment(load_experiment_config(
            "[experiment]\nkind = bias\n[truth]\nm_star = 0\nhazard_ratios = 1\n[search]\nmin_event_fraction = 0.9\n"))
    with pytest.raises(ConfigError, match="cannot read"):
        load_experiment_config("/nonexistent/file.cfg")
