import numpy as np
import pytest
from scipy.stats import norm

from cfpredict.core import Dataset, PositivityError, SequentialDataset
from cfpredict.glm import RankDeficiencyError
from cfpredict.inference import (BootstrapResult, McSummary, bootstrap,
                                 mc_summary)
from cfpredict.perf import NoComparablePairsError


def mixed_dataset(n_train=40, n_test=160, seed=0):
    rng = np.random.default_rng(seed)
    n = n_train + n_test
    x = rng.normal(size=(n, 1))
    y = rng.normal(size=n)
    split = np.concatenate([np.ones(n_train, dtype=int),
                            np.zeros(n_test, dtype=int)])
    return Dataset(x, rng.integers(0, 2, size=n), y, split, "continuous")


def test_mean(data):
    return float(np.mean(data.testing().y))


# keep pytest from collecting the helper above as a test
test_mean.__test__ = False


# ---------------------------------------------------------------------------
# bootstrap


def test_bootstrap_constant_estimator():
    data = mixed_dataset()
    result = bootstrap(data, lambda d: 5.0, n_replicates=30, seed=1)
    assert result.point == 5.0
    assert result.se == 0.0
    assert result.ci == (5.0, 5.0)
    assert result.n_replicates == 30
    assert result.n_failed == 0
    assert result.seed == 1


def test_bootstrap_deterministic_given_seed():
    data = mixed_dataset()
    a = bootstrap(data, test_mean, n_replicates=80, seed=11)
    b = bootstrap(data, test_mean, n_replicates=80, seed=11)
    assert a == b
    c = bootstrap(data, test_mean, n_replicates=80, seed=12)
    assert c.se != a.se or c.ci != a.ci


def test_bootstrap_keeps_training_rows_fixed():
    data = mixed_dataset()
    train_y = data.training().y.copy()
    test_y_sorted = np.sort(data.testing().y)

    def estimator(d):
        np.testing.assert_array_equal(d.training().y, train_y)
        assert d.n_test == data.n_test
        # resampled test rows are drawn from the original test rows
        assert np.isin(d.testing().y, test_y_sorted).all()
        return test_mean(d)

    bootstrap(data, estimator, n_replicates=25, seed=2)


def test_bootstrap_se_matches_sample_mean_theory():
    rng = np.random.default_rng(3)
    n = 10_000
    y = rng.normal(size=n)
    data = Dataset(rng.normal(size=(n, 1)), np.zeros(n, dtype=int), y,
                   np.zeros(n, dtype=int), "continuous")
    result = bootstrap(data, test_mean, n_replicates=1000, seed=4)
    theory = y.std(ddof=0) / np.sqrt(n)
    assert abs(result.se - theory) < 0.2 * theory


def test_bootstrap_percentile_interval_brackets_point():
    data = mixed_dataset(seed=5)
    result = bootstrap(data, test_mean, n_replicates=400, seed=6)
    assert result.ci[0] < result.point < result.ci[1]
    assert result.ci_method == "percentile"


def test_bootstrap_wald_interval():
    data = mixed_dataset(seed=7)
    result = bootstrap(data, test_mean, n_replicates=200, seed=8,
                       ci_method="wald")
    z = norm.ppf(0.975)
    assert result.ci[0] == pytest.approx(result.point - z * result.se)
    assert result.ci[1] == pytest.approx(result.point + z * result.se)


@pytest.mark.parametrize("err", [PositivityError, RankDeficiencyError,
                                 NoComparablePairsError, np.linalg.LinAlgError])
def test_bootstrap_drops_failed_replicates(err):
    data = mixed_dataset()
    calls = {"n": 0}

    def flaky(d):
        calls["n"] += 1
        if calls["n"] == 5:  # the point estimate is call 1
            raise err("resample went degenerate")
        return test_mean(d)

    result = bootstrap(data, flaky, n_replicates=50, seed=9)
    assert result.n_failed == 1
    assert result.n_replicates == 49


def test_bootstrap_aborts_when_too_many_replicates_fail():
    data = mixed_dataset()
    calls = {"n": 0}

    def unstable(d):
        calls["n"] += 1
        if calls["n"] > 1 and calls["n"] % 4 == 0:
            raise PositivityError("empty arm")
        return test_mean(d)

    with pytest.raises(RuntimeError, match="replicates failed"):
        bootstrap(data, unstable, n_replicates=100, seed=10)


def test_bootstrap_does_not_swallow_other_errors():
    data = mixed_dataset()

    def broken(d):
        raise KeyError("bug in the estimator")

    with pytest.raises(KeyError):
        bootstrap(data, broken, n_replicates=10, seed=11)


def test_bootstrap_validation():
    data = mixed_dataset()
    with pytest.raises(ValueError, match="ci method"):
        bootstrap(data, test_mean, ci_method="basic")
    with pytest.raises(ValueError, match="two bootstrap replicates"):
        bootstrap(data, test_mean, n_replicates=1)
    all_train = Dataset(np.zeros((4, 1)), np.zeros(4, dtype=int), np.zeros(4),
                        np.ones(4, dtype=int), "continuous")
    with pytest.raises(ValueError, match="no test rows"):
        bootstrap(all_train, test_mean)


def test_bootstrap_sequential_resamples_subjects():
    rng = np.random.default_rng(12)
    n = 60
    xs = (rng.normal(size=(n, 1)), rng.normal(size=(n, 1)))
    a = rng.integers(0, 2, size=(n, 2))
    y = rng.normal(size=n)
    ids = np.arange(n)
    data = SequentialDataset(xs, a, y, np.zeros(n, dtype=int), "continuous",
                             ids)
    seen = []

    def estimator(d):
        assert isinstance(d, SequentialDataset)
        seen.append(d.ids.copy())
        return float(np.mean(d.testing().y))

    result = bootstrap(data, estimator, n_replicates=20, seed=13)
    assert result.n_replicates == 20
    # at least one replicate must repeat a subject
    assert any(len(np.unique(s)) < n for s in seen[1:])


def test_bootstrap_result_json():
    result = BootstrapResult(0.5, 0.1, (0.3, 0.7), 100, 2, "percentile", 42)
    blob = result.to_json()
    assert blob == {"point": 0.5, "se": 0.1, "ci": [0.3, 0.7],
                    "n_replicates": 100, "n_failed": 2,
                    "ci_method": "percentile", "seed": 42}


# ---------------------------------------------------------------------------
# Monte Carlo summaries


def test_mc_summary_hand_arithmetic():
    out = mc_summary([1.0, 3.0], truth=2.0, n_test=4)
    assert out.n_reps == 2
    assert out.mean == pytest.approx(2.0)
    assert out.sd == pytest.approx(np.sqrt(2.0))
    assert out.bias == pytest.approx(0.0)
    assert out.rel_bias == pytest.approx(0.0)
    assert out.sqrt_n_sd == pytest.approx(2.0 * np.sqrt(2.0))
    assert out.sqrt_n_bias == pytest.approx(0.0)


def test_mc_summary_root_n_scaling():
    out = mc_summary([2.0, 4.0], truth=1.0, n_test=9)
    assert out.bias == pytest.approx(2.0)
    assert out.sqrt_n_bias == pytest.approx(6.0)
    assert out.rel_bias == pytest.approx(2.0)
    assert out.sqrt_n_sd == pytest.approx(3.0 * out.sd)


def test_mc_summary_permutation_invariant():
    rng = np.random.default_rng(14)
    values = rng.normal(size=50)
    base = mc_summary(values + 3.0, truth=3.0, n_test=100)
    shuffled = mc_summary(rng.permutation(values) + 3.0, truth=3.0, n_test=100)
    assert shuffled.mean == pytest.approx(base.mean, rel=1e-12)
    assert shuffled.sd == pytest.approx(base.sd, rel=1e-12)
    assert shuffled.sqrt_n_bias == pytest.approx(base.sqrt_n_bias, abs=1e-12)


def test_mc_summary_validation():
    with pytest.raises(ValueError, match="zero truth"):
        mc_summary([1.0, 2.0], truth=0.0, n_test=10)
    with pytest.raises(ValueError, match="two replicate"):
        mc_summary([1.0], truth=1.0, n_test=10)
    with pytest.raises(ValueError, match="finite"):
        mc_summary([1.0, np.nan], truth=1.0, n_test=10)
    with pytest.raises(ValueError, match="n_test"):
        mc_summary([1.0, 2.0], truth=1.0, n_test=0)


def test_mc_summary_json_fields():
    out = mc_summary([1.0, 3.0], truth=2.0, n_test=4)
    blob = out.to_json()
    assert blob["n_reps"] == 2
    assert blob["truth"] == 2.0
    assert blob["sqrt_n_sd"] == pytest.approx(2.0 * np.sqrt(2.0))
    assert set(blob) == {"n_reps", "n_test", "truth", "mean", "sd", "bias",
                         "rel_bias", "sqrt_n_sd", "sqrt_n_bias"}
