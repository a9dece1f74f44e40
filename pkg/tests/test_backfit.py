import json

import numpy as np
import pytest

from liso.backfit import (
    DECREASING,
    INCREASING,
    UNCONSTRAINED,
    AdditiveModel,
    Dataset,
    LisoConfig,
    component_values,
    default_grid,
    fitted,
    kkt_certificate,
    lambda_max,
    liso_fit,
    liso_path,
    normalize_direction,
    objective,
    predict,
    zero_model,
)
from liso.oracle import build_expanded, expanded_fitted, nn_lasso_objective, nn_lasso_solve
from liso.pava import merge_ties
from liso.shrink import univariate_liso, zero_threshold
from liso.stepfn import StepFunction


def random_data(rng, n, p, weights=False, noise=1.0):
    x = rng.uniform(-1, 1, (n, p))
    y = x[:, 0] - 0.5 * np.sign(x[:, min(1, p - 1)]) + noise * rng.normal(size=n)
    w = rng.uniform(0.5, 2.0, n) if weights else None
    return Dataset(x, y, w)


def test_dataset_centres_and_sorts(rng):
    d = random_data(rng, 20, 3, weights=True)
    assert abs(np.dot(d.w, d.y)) < 1e-12
    for k in range(d.p):
        assert np.all(np.diff(d.x[d.sort_index[k], k]) >= 0)
    np.testing.assert_allclose(d.response, d.y + d.y_mean)


@pytest.mark.parametrize(
    "x, y, w",
    [
        (np.zeros((1, 2)), [1.0], None),
        (np.zeros((3, 2)), [1.0, 2.0], None),
        (np.zeros((2, 1)), [1.0, np.nan], None),
        (np.zeros((2, 1)), [1.0, 2.0], [1.0, 0.0]),
    ],
)
def test_dataset_errors(x, y, w):
    with pytest.raises(ValueError):
        Dataset(x, y, w)


def test_dataset_tied_covariates():
    d = Dataset([[1.0], [1.0], [2.0]], [0.0, 2.0, 5.0])
    s = d.series(0)
    np.testing.assert_array_equal(s.x, [1, 2])
    np.testing.assert_array_equal(s.w, [2, 1])


def test_direction_aliases():
    assert normalize_direction("inc") == INCREASING
    assert normalize_direction("dec") == DECREASING
    assert normalize_direction("auto") == UNCONSTRAINED
    with pytest.raises(ValueError):
        normalize_direction("sideways")


def test_config_validation():
    with pytest.raises(ValueError):
        LisoConfig(lam=-1.0)
    with pytest.raises(ValueError):
        LisoConfig(tol_loss=0.0)
    with pytest.raises(ValueError):
        LisoConfig(cycle_order="shuffled")
    with pytest.raises(ValueError):
        LisoConfig(penalty_weights=(1.0, -1.0)).resolve(2)


def test_single_covariate_equals_univariate(rng):
    for _ in range(20):
        n = int(rng.integers(2, 15))
        x = rng.integers(0, 6, n).astype(float)
        y = rng.normal(size=n)
        w = rng.integers(1, 4, n).astype(float)
        d = Dataset(x, y, w)
        s = merge_ties(x, d.y, w)
        lam = rng.uniform(0, 1) * zero_threshold(s)
        m = liso_fit(d, LisoConfig(lam=lam))
        ref = univariate_liso(s, lam)
        got = component_values(d, m)[0]
        expect = ref(x) - np.dot(w, ref(x)) / w.sum()
        np.testing.assert_allclose(got, expect, atol=1e-10)


def test_zero_at_lambda_max(rng):
    for _ in range(10):
        d = random_data(rng, 30, 4, weights=True)
        top = lambda_max(d)
        for lam in (top, 2 * top):
            m = liso_fit(d, LisoConfig(lam=lam))
            assert m.is_zero
            assert m.intercept == pytest.approx(d.y_mean)


def test_lambda_max_examples():
    d = Dataset(np.array([[0.0], [1.0], [2.0]]), [-1.0, 0.0, 1.0])
    assert lambda_max(d) == pytest.approx(zero_threshold(d.series(0)))
    assert lambda_max(Dataset(np.eye(3), np.ones(3))) == 0.0
    x = np.random.default_rng(0).normal(size=12)
    y = np.random.default_rng(1).normal(size=12)
    one = lambda_max(Dataset(x[:, None], y))
    assert lambda_max(Dataset(np.column_stack([x, x]), y)) == pytest.approx(one)
    weighted = LisoConfig(penalty_weights=(2.0,))
    assert lambda_max(Dataset(x[:, None], y), weighted) == pytest.approx(one / 2)


def test_matches_expanded_lasso_n8_p2(rng):
    d = random_data(rng, 8, 2)
    lam = 0.3 * lambda_max(d)
    m = liso_fit(d, LisoConfig(lam=lam))
    D = build_expanded(d)
    beta = nn_lasso_solve(D, d.y, lam)
    assert objective(d, m) == pytest.approx(nn_lasso_objective(D, d.y, beta, lam), abs=1e-6)
    np.testing.assert_allclose(component_values(d, m).sum(0), expanded_fitted(D, beta), atol=1e-6)


def test_objective_examples():
    d = Dataset(np.array([[0.0], [1.0], [2.0]]), [-1.0, 0.0, 1.0])
    z = zero_model(d, LisoConfig(lam=0.5))
    assert objective(d, z) == pytest.approx(1.0)
    m = liso_fit(d, LisoConfig(lam=0.5))
    np.testing.assert_allclose(component_values(d, m)[0], [-0.5, 0.0, 0.5], atol=1e-12)
    assert objective(d, m) == pytest.approx(0.75)
    # lambda = 0 on monotone data interpolates
    m0 = liso_fit(d, LisoConfig(lam=0.0))
    assert objective(d, m0) == pytest.approx(0.0, abs=1e-20)


def test_predict_examples(rng):
    d = random_data(rng, 25, 3)
    m = liso_fit(d, LisoConfig(lam=0.1 * lambda_max(d)))
    np.testing.assert_allclose(predict(m, d.x), fitted(d, m), atol=1e-12)
    z = zero_model(d, LisoConfig())
    np.testing.assert_allclose(z.predict(d.x), d.y_mean)
    far = np.full((2, 3), 100.0)
    far[1] = -100.0
    edge_hi = d.x.max(axis=0)[None, :]
    edge_lo = d.x.min(axis=0)[None, :]
    np.testing.assert_allclose(m.predict(far), np.concatenate([m.predict(edge_hi), m.predict(edge_lo)]))
    with pytest.raises(ValueError):
        m.predict(np.zeros((2, 2)))


def test_descent_conservation_and_certificate(rng):
    for trial in range(15):
        d = random_data(rng, int(rng.integers(5, 40)), int(rng.integers(1, 6)), weights=trial % 2 == 0)
        dirs = tuple(rng.choice([INCREASING, DECREASING, UNCONSTRAINED], size=d.p))
        c = LisoConfig(directions=dirs)
        for lam in default_grid(d, c, count=6):
            cl = c.with_lam(lam)
            m = liso_fit(d, cl)
            h = m.loss_history
            assert np.all(np.diff(h) <= 1e-12)
            assert m.diagnostics["converged"]
            total = np.dot(d.w, fitted(d, m))
            assert total == pytest.approx(np.dot(d.w, d.response), abs=1e-9)
            assert kkt_certificate(d, m, cl) < 10 * cl.tol_change
            for k, f in enumerate(m.components):
                if f.is_empty:
                    continue
                assert abs(np.dot(d.knot_weights(k), f.values)) < 1e-9
                if dirs[k] == INCREASING:
                    assert f.is_nondecreasing()
                elif dirs[k] == DECREASING:
                    assert f.is_nonincreasing()


def test_path_warm_start_matches_cold(rng):
    d = random_data(rng, 60, 8)
    grid = default_grid(d, count=12)
    for lam, m in zip(grid, liso_path(d, grid)):
        cold = liso_fit(d, LisoConfig(lam=lam))
        assert objective(d, m) == pytest.approx(objective(d, cold), abs=1e-6)


def test_path_examples(rng):
    d = random_data(rng, 30, 3)
    top = lambda_max(d)
    assert all(m.is_zero for m in liso_path(d, [2 * top, top]))
    (single,) = liso_path(d, [0.2 * top])
    cold = liso_fit(d, LisoConfig(lam=0.2 * top))
    np.testing.assert_allclose(fitted(d, single), fitted(d, cold), atol=1e-7)
    with pytest.raises(ValueError):
        liso_path(d, [])
    with pytest.raises(ValueError):
        liso_path(d, [1.0, 2.0])


def test_active_count_shrinks_with_lambda():
    rng = np.random.default_rng(2024)
    n, p = 50, 20
    x = rng.uniform(-1, 1, (n, p))
    y = x[:, 0] + x[:, 1] + x[:, 2]
    d = Dataset(x, y)
    grid = default_grid(d, count=30)
    active = np.array([len(m.active_set()) for m in liso_path(d, grid)])
    # above the noise floor the count never grows as lambda increases
    upper = active[: 15]
    assert np.all(np.diff(upper) >= 0)
    assert active[0] == 0 and active[-1] >= 3


def test_random_order_reaches_same_optimum(rng):
    for _ in range(10):
        d = random_data(rng, 9, 3)
        lam = 0.2 * lambda_max(d)
        fixed = liso_fit(d, LisoConfig(lam=lam))
        shuffled = liso_fit(d, LisoConfig(lam=lam, cycle_order="random", seed=5))
        assert objective(d, fixed) == pytest.approx(objective(d, shuffled), abs=1e-8)


def test_penalty_weights_and_exclusion(rng):
    d = random_data(rng, 40, 3)
    lam = 0.2 * lambda_max(d)
    m = liso_fit(d, LisoConfig(lam=lam, exclude=(0,)))
    assert m.components[0].is_empty
    heavy = liso_fit(d, LisoConfig(lam=lam, penalty_weights=(1e6, 1.0, 1.0)))
    assert 0 not in heavy.active_set()


def test_warm_start_must_conform(rng):
    d = random_data(rng, 20, 3)
    other = liso_fit(random_data(rng, 20, 2), LisoConfig(lam=0.1))
    with pytest.raises(ValueError):
        liso_fit(d, LisoConfig(lam=0.1), warm_start=other)


def test_max_cycles_reports_not_converged(rng):
    d = random_data(rng, 50, 6, noise=0.1)
    m = liso_fit(d, LisoConfig(lam=1e-3, max_cycles=1))
    assert m.diagnostics["cycles"] == 1
    assert not m.diagnostics["converged"]


def test_json_round_trip(rng):
    d = random_data(rng, 30, 3)
    m = liso_fit(d, LisoConfig(lam=0.1 * lambda_max(d), directions=("inc", "dec", "auto"),
                               exclude=(2,)))
    blob = m.to_json()
    back = AdditiveModel.from_json(blob)
    probe = rng.uniform(-2, 2, (40, 3))
    np.testing.assert_array_equal(back.predict(probe), m.predict(probe))
    assert back.to_json() == blob
    doc = json.loads(blob)
    assert set(doc) >= {"intercept", "lambda", "components", "diagnostics"}
    assert doc["components"][1]["direction"] == DECREASING


def test_empty_component_evaluates_to_zero(rng):
    d = random_data(rng, 10, 2)
    m = AdditiveModel(1.5, [StepFunction.empty(), StepFunction.empty()], (INCREASING,) * 2, 0.0)
    np.testing.assert_allclose(m.predict(d.x), 1.5)
