import numpy as np
import pytest

from liso.backfit import Dataset, LisoConfig, default_grid, lambda_max, liso_path, zero_model
from liso.modelsel import (
    CvReport,
    cross_validate,
    cv_adaptive,
    fold_assignment,
    select_from_curve,
    validation_tune,
    weighted_mse,
)
from liso.sim import SimScenario, generate


def additive_data(rng, n=60, p=5, noise=0.5):
    x = rng.uniform(-1, 1, (n, p))
    y = 2 * x[:, 0] + np.sign(x[:, 1]) + noise * rng.normal(size=n)
    return Dataset(x, y)


def check_report(rep: CvReport):
    i, j = rep.index_min, rep.index_1se
    assert rep.mean_mse[i] == rep.mean_mse.min()
    assert rep.lam_1se >= rep.lam_min
    bound = rep.mean_mse[i] + rep.sd_mse[i]
    ok = np.flatnonzero(rep.mean_mse <= bound)
    assert rep.lam_1se == rep.grid[ok].max()
    assert j == ok[0]


def test_fold_partition():
    for n, k in ((10, 3), (7, 7), (100, 10)):
        ids = fold_assignment(n, k, seed=4)
        assert ids.shape == (n,)
        counts = np.bincount(ids, minlength=k)
        assert counts.sum() == n and counts.min() >= n // k and counts.max() <= n // k + 1
    np.testing.assert_array_equal(fold_assignment(30, 5, 1), fold_assignment(30, 5, 1))


def test_grid_above_lambda_max_gives_heldout_variance(rng):
    d = additive_data(rng)
    rep = cross_validate(d, [10 * lambda_max(d)], folds=5, seed=3)
    ids = rep.fold_ids
    for f in range(5):
        test, train = ids == f, ids != f
        expect = np.mean((d.response[test] - d.response[train].mean()) ** 2)
        assert rep.fold_mse[f, 0] == pytest.approx(expect, rel=1e-12)


def test_leave_one_out_small(rng):
    d = additive_data(rng, n=5, p=2)
    rep = cross_validate(d, default_grid(d, count=5), folds=5, seed=0)
    assert rep.fold_mse.shape == (5, 5)
    check_report(rep)


def test_fold_and_grid_errors(rng):
    d = additive_data(rng, n=10)
    with pytest.raises(ValueError):
        cross_validate(d, folds=1)
    with pytest.raises(ValueError):
        cross_validate(d, folds=11)
    with pytest.raises(ValueError):
        cross_validate(d, [0.1, 0.2], folds=2)
    with pytest.raises(ValueError):
        cross_validate(d, [], folds=2)
    with pytest.raises(ValueError):
        cross_validate(Dataset(rng.normal(size=(2, 1)), [0.0, 1.0]), [1.0], folds=2)


def test_cv_curve_is_u_shaped():
    draw = generate(SimScenario("all_linear", 100, 50, 5.0, seed=11))
    d = draw.train
    rep = cross_validate(d, default_grid(d, count=30), folds=10, seed=0)
    check_report(rep)
    i = rep.index_min
    assert rep.mean_mse[0] > rep.mean_mse[i]
    assert rep.mean_mse[-1] > rep.mean_mse[i]


def test_select_from_curve_definition():
    grid = np.array([5.0, 4.0, 3.0, 2.0, 1.0])
    mean = np.array([3.0, 1.5, 1.2, 1.0, 1.1])
    sd = np.full(5, 0.25)
    assert select_from_curve(grid, mean, sd) == (2.0, 3.0)
    # ties go to the larger penalty
    assert select_from_curve(grid, np.array([2.0, 1.0, 1.0, 1.0, 2.0]), np.zeros(5)) == (4.0, 4.0)


def test_report_determinism_and_exports(rng):
    d = additive_data(rng)
    a = cross_validate(d, folds=4, seed=9)
    b = cross_validate(d, folds=4, seed=9)
    assert a.to_json() == b.to_json()
    check_report(a)
    lines = a.to_csv().splitlines()
    assert lines[0] == "lambda,mean_mse,sd_mse"
    assert len(lines) == a.grid.size + 1
    assert float(lines[1].split(",")[0]) == a.grid[0]


def test_custom_fitter_is_used(rng):
    d = additive_data(rng, n=20)
    calls = []

    def fitter(train, grid):
        calls.append(train.n)
        return liso_path(train, grid)

    cross_validate(d, [lambda_max(d)], folds=4, fitter=fitter)
    assert sorted(calls) == [15] * 4


def test_weighted_mse(rng):
    d = additive_data(rng, n=10)
    z = zero_model(d, LisoConfig())
    w = rng.uniform(0.5, 2, 10)
    r = d.response - d.y_mean
    assert weighted_mse(z, d.x, d.response, w) == pytest.approx(np.dot(w, r * r) / w.sum())


def test_validation_tune_noiseless_in_sample():
    rng = np.random.default_rng(5)
    x = rng.uniform(-1, 1, (60, 3))
    d = Dataset(x, np.sign(x[:, 0]) + x[:, 1])
    grid = default_grid(d, count=20, ratio=1e-4)
    res = validation_tune(d, d, grid)
    assert res.lam <= grid[len(grid) // 2]
    assert res.mse < 1e-2 * np.var(d.y)


def test_validation_tune_pure_noise_prefers_large_lambda():
    rng = np.random.default_rng(6)
    train = Dataset(rng.uniform(-1, 1, (80, 5)), rng.normal(size=80))
    valid = Dataset(rng.uniform(-1, 1, (80, 5)), rng.normal(size=80))
    grid = default_grid(train, count=40)
    res = validation_tune(train, valid, grid)
    assert res.lam >= np.quantile(grid, 0.75)


def test_validation_tune_single_and_empty_grid(rng):
    d = additive_data(rng)
    assert validation_tune(d, d, [0.3]).lam == 0.3
    with pytest.raises(ValueError):
        validation_tune(d, d, [])
    with pytest.raises(ValueError):
        validation_tune(d, d, [], fitter="adaptive")
    with pytest.raises(ValueError):
        validation_tune(d, d, fitter="ridge")


@pytest.mark.parametrize("fitter", ["adaptive", "scad"])
def test_two_stage_tuning(fitter):
    draw = generate(SimScenario("all_linear", 80, 10, 5.0, seed=2))
    res = validation_tune(draw.train, draw.valid, fitter=fitter, coarse=4)
    lam0, lam1 = res.lam
    assert lam0 > 0 and lam1 >= 0
    assert res.mse == min(e for _, e in res.table)
    plain = validation_tune(draw.train, draw.valid)
    assert res.mse < 1.5 * plain.mse


def test_cv_adaptive_runs(rng):
    d = additive_data(rng, n=50)
    model, lam0, lam1, first, second = cv_adaptive(d, folds=3, seed=1, count=10)
    assert lam0 == first.lam_min
    assert set(model.active_set()) <= set(range(d.p))
    if second is not None:
        assert lam1 == second.lam_min
