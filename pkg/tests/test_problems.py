import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dlas_ftc.problems import (
    Dataset,
    LeastSquaresProblem,
    ProblemConfigError,
    build_problem,
    generate_regression_data,
    load_dataset,
    save_dataset,
)
from oracles import central_difference


@pytest.fixture(scope="module")
def regression_data():
    return generate_regression_data(seed=0)


def test_noise_free_line():
    d = generate_regression_data(3, 4, noise_sd=0.0, seed=1)
    assert np.allclose(d.psi, 4 + 3 * d.chi)
    one = Dataset(np.array([[1.0]]), 4 + 3 * np.array([[1.0]]))
    assert one.psi[0, 0] == 7.0


def test_generator_ranges_and_noise(regression_data):
    d = regression_data
    assert d.chi.shape == (20, 50)
    assert d.chi.min() >= -5 and d.chi.max() <= 5
    gamma = d.psi - 4 - 3 * d.chi
    assert abs(gamma.mean()) <= 3 * 7 / np.sqrt(gamma.size)
    slope, intercept = np.polyfit(d.chi.ravel(), d.psi.ravel(), 1)
    se = 7 / np.sqrt(gamma.size * np.var(d.chi))
    assert abs(slope - 3) <= 4 * se
    assert abs(intercept - 4) <= 4 * 7 / np.sqrt(gamma.size)


def test_generator_is_deterministic():
    a = generate_regression_data(seed=5)
    b = generate_regression_data(seed=5)
    assert np.array_equal(a.chi, b.chi) and np.array_equal(a.psi, b.psi)


@pytest.mark.parametrize("kw", [{"samples_per_node": 0}, {"node_count": 0}, {"noise_sd": -1.0}])
def test_generator_rejects_bad_config(kw):
    with pytest.raises(ProblemConfigError):
        generate_regression_data(**kw)


def test_local_cost_examples():
    single = build_problem(Dataset(np.array([[1.0]]), np.array([[2.0]])))
    assert single.local_cost(0, [1.0, 2.0]) == 0.0
    two = build_problem(Dataset(np.array([[0.0, 2.0]]), np.array([[0.0, 0.0]])))
    assert two.local_cost(0, [1.0, 0.0]) == pytest.approx(1.0)


def test_sample_mean_minimises_local_cost(regression_data):
    p = build_problem(regression_data)
    for i in range(3):
        mean = np.array([regression_data.chi[i].mean(), regression_data.psi[i].mean()])
        assert np.allclose(p.local_gradient(i, mean), 0, atol=1e-12)
        for step in ([0.1, 0], [0, -0.1]):
            assert p.local_cost(i, mean + step) > p.local_cost(i, mean)


def test_optimum_is_grand_mean(regression_data):
    p = build_problem(regression_data)
    assert np.allclose(p.optimum(), [regression_data.chi.mean(), regression_data.psi.mean()])
    assert np.allclose(sum(p.local_gradient(i, p.optimum()) for i in range(20)), 0, atol=1e-10)


@pytest.mark.parametrize("mode", ["vector", "scalar"])
def test_gradient_matches_finite_differences(regression_data, mode):
    p = build_problem(regression_data, mode)
    rng = np.random.default_rng(2)
    for _ in range(100):
        i = int(rng.integers(20))
        x = rng.uniform(-10, 10, p.dim)
        fd = central_difference(lambda z: p.local_cost(i, z), x)
        g = p.local_gradient(i, x)
        assert np.linalg.norm(g - fd) <= 1e-6 * max(1.0, np.linalg.norm(g))


def test_single_sample_stochastic_equals_full():
    p = build_problem(Dataset(np.array([[1.5]]), np.array([[-2.0]])))
    rng = np.random.default_rng(0)
    for x in ([0.0, 0.0], [3.0, 1.0]):
        g, h = p.stochastic_gradient(0, x, rng)
        assert h == 0 and np.allclose(g, p.local_gradient(0, x))


@pytest.mark.parametrize("mode", ["vector", "scalar"])
def test_stochastic_gradient_unbiased(regression_data, mode):
    p = build_problem(regression_data, mode)
    rng = np.random.default_rng(11)
    x = rng.uniform(-5, 5, p.dim)
    draws = np.array([p.stochastic_gradient(3, x, rng)[0] for _ in range(100_000)])
    se = draws.std(axis=0, ddof=1) / np.sqrt(len(draws))
    assert np.all(np.abs(draws.mean(axis=0) - p.local_gradient(3, x)) <= 3 * se)


def test_stochastic_gradients_average_to_zero_at_mean(regression_data):
    p = build_problem(regression_data)
    mean = np.array([regression_data.chi[0].mean(), regression_data.psi[0].mean()])
    exact = np.mean([p.sample_gradient(0, h, mean) for h in range(50)], axis=0)
    assert np.allclose(exact, 0, atol=1e-12)


def test_constants_vector_mode(regression_data):
    p = build_problem(regression_data)
    c = p.constants()
    assert c.L == pytest.approx(2.0) and c.mu == pytest.approx(2.0)
    assert np.allclose(c.L_i, 2.0) and np.allclose(c.mu_i, 2.0)
    xi = np.stack([regression_data.chi, regression_data.psi], axis=-1)
    spread = np.linalg.norm(xi - xi.mean(axis=1, keepdims=True), axis=2).max(axis=1)
    assert c.sigma == pytest.approx(2 * spread.max())
    assert c.sigma_stacked == pytest.approx(2 * np.sqrt(np.sum(spread**2)))


def test_constants_single_sample_nodes():
    d = generate_regression_data(4, 1, seed=3)
    assert build_problem(d).constants().sigma == 0.0


def test_constants_scalar_mode_need_box(regression_data):
    p = build_problem(regression_data, "scalar")
    with pytest.raises(ProblemConfigError):
        p.constants()
    c = p.constants(([-1.0], [5.0]))
    assert c.L == pytest.approx(2 * (regression_data.chi**2).mean(axis=1).max())
    assert c.mu == pytest.approx(2 * (regression_data.chi**2).mean(axis=1).min())


def test_unknown_mode(regression_data):
    with pytest.raises(ProblemConfigError):
        build_problem(regression_data, "matrix")


@given(st.integers(0, 10_000))
def test_curvature_sandwich(seed):
    d = generate_regression_data(5, 7, seed=seed)
    p = build_problem(d)
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=(2, 2)) * 10
    i = int(rng.integers(5))
    inner = (p.local_gradient(i, x) - p.local_gradient(i, y)) @ (x - y)
    assert inner == pytest.approx(2 * np.sum((x - y) ** 2), rel=1e-9)


def test_dataset_round_trip(tmp_path, regression_data):
    path = tmp_path / "d.csv"
    save_dataset(regression_data, path)
    header = path.read_text().splitlines()[0]
    assert header == "node,h,chi,psi"
    back = load_dataset(path)
    assert np.array_equal(back.chi, regression_data.chi) and np.array_equal(back.psi, regression_data.psi)


def test_least_squares_general_shapes():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(3, 4, 2, 3))
    b = rng.normal(size=(3, 4, 2))
    p = LeastSquaresProblem(A, b)
    x = rng.normal(size=3)
    fd = central_difference(lambda z: p.local_cost(1, z), x)
    assert np.allclose(p.local_gradient(1, x), fd, atol=1e-6)
