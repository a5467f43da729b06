import numpy as np
import pytest

from modalreg import kernel, lsld
from modalreg.data import Dataset, GeneratorSpec, gen_synthetic
from modalreg.errors import ConfigError, DataError, NumericalError

from conftest import random_dataset


def normal_joint(rng, n, d=1):
    return Dataset(rng.uniform(-1, 1, size=(n, d)), rng.normal(size=n))


def median_params(data):
    return kernel.KernelParams(kernel.median_trick(data.y[:, None]), kernel.median_trick(data.X))


def system_residual(model, data):
    K, G, _ = kernel.assemble_matrices(data.y, data.X, model.params)
    nlam = data.n * model.lam
    rhs = G.sum(axis=1) / nlam
    return np.linalg.norm((K + nlam * np.eye(data.n)) @ model.alphas - rhs), np.linalg.norm(rhs)


def test_single_point_fit():
    data = Dataset(np.array([[0.3]]), np.array([1.2]))
    m = lsld.fit_lsld(data, kernel.KernelParams(0.5, 0.7), 0.2)
    assert m.alphas.tolist() == [0.0]
    assert m.beta_const == -1.0 / 0.2
    assert m.r(1.2, [0.3])[0] == 0.0
    assert m.dr_dy(1.2, [0.3])[0] == pytest.approx(-1.0 / (0.2 * 0.5**2), rel=1e-14)


def test_linear_system_residual(rng):
    data = random_dataset(rng, 30, 2)
    m = lsld.fit_lsld(data, kernel.KernelParams(0.6, 0.9), lsld.default_lambda(30))
    res, scale = system_residual(m, data)
    assert res <= 1e-8 * scale
    assert m.beta_const == -1.0 / (30 * m.lam)


def test_fit_validates_lambda(rng):
    data = random_dataset(rng, 5, 1)
    with pytest.raises(ConfigError):
        lsld.fit_lsld(data, kernel.KernelParams(1, 1), 0.0)


def test_standard_normal_score_rmse():
    ys = np.linspace(-2, 2, 41)
    errs = []
    for seed in range(10):
        data = normal_joint(np.random.default_rng(seed), 200)
        m = lsld.fit_lsld(data, median_params(data), lsld.default_lambda(200))
        errs.append(np.sqrt(np.mean((m.r(ys, np.zeros((41, 1))) + ys) ** 2)))
    assert np.median(errs) < 0.3


def test_score_sign_n200(rng):
    data = normal_joint(rng, 200)
    m = lsld.fit_lsld(data, median_params(data), lsld.default_lambda(200))
    ys = np.array([-1.5, -0.5, 0.5, 1.5])
    assert np.array_equal(np.sign(m.r(ys, np.zeros((4, 1)))), -np.sign(ys))


def test_zeroed_alpha_reduction(rng):
    data = random_dataset(rng, 3, 2)
    p = kernel.KernelParams(0.8, 1.2)
    m = lsld.fit_lsld(data, p, 0.1)
    m.alphas = np.zeros(3)
    y, x = 0.37, np.array([0.1, -0.4])
    manual = sum((data.y[l] - y) * np.exp(-(y - data.y[l]) ** 2 / (2 * 0.64))
                 * np.exp(-np.sum((x - data.X[l]) ** 2) / (2 * 1.44)) for l in range(3))
    manual /= 3 * 0.1 * 0.64
    assert m.r(y, x)[0] == pytest.approx(manual, rel=1e-13)


def test_dr_dy_matches_finite_difference(rng):
    data = random_dataset(rng, 25, 2)
    m = lsld.fit_lsld(data, kernel.KernelParams(0.7, 0.8), 0.05)
    ys = rng.normal(size=50)
    X = rng.uniform(-1, 1, size=(50, 2))
    h = 1e-6
    fd = (m.r(ys + h, X) - m.r(ys - h, X)) / (2 * h)
    an = m.dr_dy(ys, X)
    assert np.all(np.abs(an - fd) <= 1e-5 * np.maximum(np.abs(fd), 1.0))


def test_zero_model_evaluates_to_zero(rng):
    data = random_dataset(rng, 4, 1)
    m = lsld.LsldModel(np.zeros(4), 0.0, data.y, data.X, kernel.KernelParams(1, 1), 1.0)
    assert np.all(m.r(rng.normal(size=5), rng.normal(size=(5, 1))) == 0)
    assert np.all(m.dr_dy(rng.normal(size=5), rng.normal(size=(5, 1))) == 0)
    assert lsld.empirical_fisher(m, data) == 0.0


def test_eval_dimension_mismatch(rng):
    data = random_dataset(rng, 6, 2)
    m = lsld.fit_lsld(data, kernel.KernelParams(1, 1), 0.1)
    with pytest.raises(DataError):
        m.r(np.zeros(3), np.zeros((3, 3)))


def test_empirical_fisher_stub(rng):
    y = rng.normal(size=10**5)
    data = Dataset(np.zeros((y.size, 1)), y)
    val = lsld.empirical_fisher(lambda yy, XX: (-yy, -np.ones_like(yy)), data)
    assert val == pytest.approx(np.mean(0.5 * y**2 - 1), rel=1e-12)
    assert abs(val + 0.5) < 0.02


def test_empirical_fisher_decreases_with_lambda(rng):
    data = random_dataset(rng, 100, 1)
    p = median_params(data)
    vals = [lsld.empirical_fisher(lsld.fit_lsld(data, p, lam), data) for lam in (1.0, 0.1, 0.01)]
    assert vals[0] > vals[1] > vals[2]


@pytest.mark.parametrize("n,d", [(5, 1), (10, 3), (30, 1)])
def test_loocv_matches_naive(rng, n, d):
    data = random_dataset(rng, n, d)
    p = kernel.KernelParams(0.5 + rng.uniform(), 0.5 + rng.uniform())
    lam = 10 ** rng.uniform(-3, -0.5)
    a, b = lsld.loocv_score(data, p, lam), lsld.loocv_naive(data, p, lam)
    assert abs(a - b) <= 1e-8 * abs(b)


def test_loocv_collinear_n3():
    data = Dataset(np.array([[0.0], [1.0], [2.0]]), np.array([0.0, 1.0, 2.0]))
    p = kernel.KernelParams(1.0, 1.0)
    a, b = lsld.loocv_score(data, p, 1.0), lsld.loocv_naive(data, p, 1.0)
    assert np.isfinite(a) and abs(a - b) <= 1e-8 * abs(b)
    a2, b2 = lsld.loocv_score(data, p, 2.0), lsld.loocv_naive(data, p, 2.0)
    assert abs(a2 - b2) <= 1e-8 * abs(b2)
    assert a2 != a


def test_loocv_permutation_invariant(rng):
    data = random_dataset(rng, 12, 2)
    p = kernel.KernelParams(0.8, 0.9)
    perm = rng.permutation(12)
    a = lsld.loocv_score(data, p, 0.05)
    b = lsld.loocv_score(data.subset(perm), p, 0.05)
    assert a == pytest.approx(b, rel=1e-12)


def test_loocv_needs_three_points(rng):
    with pytest.raises(DataError):
        lsld.loocv_score(random_dataset(rng, 2, 1), kernel.KernelParams(1, 1), 0.1)


def test_select_model_single_cell(rng):
    data = random_dataset(rng, 20, 1)
    params, m = lsld.select_model(data, lsld.ModelGrid([0.7], [0.4]))
    assert (params.sigma_y, params.sigma_x) == (0.7, 0.4)
    assert m.lam == lsld.default_lambda(20)


def test_select_model_exhaustive_and_order_free():
    data = gen_synthetic(GeneratorSpec("M1", "gauss", 1, 60, 3))
    my, mx = kernel.median_trick(data.y[:, None]), kernel.median_trick(data.X)
    ys, xs = [0.5 * my, my, 2 * my], [0.5 * mx, mx, 2 * mx]
    params, _ = lsld.select_model(data, lsld.ModelGrid(ys, xs))
    lam = lsld.default_lambda(60)
    scores = {(sy, sx): lsld.loocv_score(data, kernel.KernelParams(sy, sx), lam)
              for sy in ys for sx in xs}
    best = min(scores, key=scores.get)
    assert (params.sigma_y, params.sigma_x) == best
    params2, _ = lsld.select_model(data, lsld.ModelGrid(ys[::-1], [xs[1], xs[2], xs[0]]))
    assert params2 == params


def test_select_model_tie_break(rng):
    data = random_dataset(rng, 10, 1)
    params, _ = lsld.select_model(data, lsld.ModelGrid([0.9, 0.9], [1.1, 0.6, 1.1]))
    grid = lsld.ModelGrid([0.9], [0.6, 1.1])
    lsld.select_model(data, grid)
    best = min(grid.cells, key=lambda k: (grid.cells[k], k))
    assert (params.sigma_y, params.sigma_x) == best


def test_select_model_all_cells_fail(rng, monkeypatch):
    data = random_dataset(rng, 10, 1)

    def boom(*a, **k):
        raise NumericalError("forced")

    monkeypatch.setattr(lsld, "loocv_score", boom)
    with pytest.raises(NumericalError, match="forced"):
        lsld.select_model(data, lsld.ModelGrid([1.0, 2.0], [1.0]))
    with pytest.raises(ConfigError):
        lsld.ModelGrid([], [1.0])


def test_default_grid_centred_on_medians(rng):
    data = random_dataset(rng, 30, 2)
    g = lsld.default_grid(data)
    assert g.sigma_y_candidates[2] == kernel.median_trick(data.y[:, None])
    assert g.sigma_x_candidates[2] == kernel.median_trick(data.X)
    assert len(g.sigma_y_candidates) == len(g.sigma_x_candidates) == 5


def test_score_error_shrinks_with_n():
    ys = np.linspace(-2, 2, 41)

    def err(n, seed):
        rng = np.random.default_rng(seed)
        data = normal_joint(rng, n)
        m = lsld.fit_lsld(data, median_params(data), lsld.default_lambda(n))
        return np.sqrt(np.mean((m.r(ys, np.zeros((41, 1))) + ys) ** 2))

    small = np.median([err(50, s) for s in range(10)])
    large = np.median([err(400, s) for s in range(10)])
    assert large < small
