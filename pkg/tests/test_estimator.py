import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import optimize

from tlml.estimator import (
    FitOptions,
    functional_estimate,
    gaussian_closed_form,
    ilml_step,
    rolling_ols_fit,
    tlml_fit,
    weighted_objective,
)
from tlml.glim import DomainError, GaussianMean, PoissonGaussianGlim, PoissonGlim, RegressionFrame, poisson_logl
from tlml.sis import Constant, simulate_epidemic
from tlml.weights import WeightScheme

schemes = st.one_of(
    st.just(WeightScheme.uniform()),
    st.integers(1, 40).map(WeightScheme.rolling),
    st.floats(0.05, 0.99).map(WeightScheme.geometric),
    st.floats(0.1, 2.0).map(WeightScheme.hyperbolic),
    st.builds(WeightScheme.kernel_scaled, st.sampled_from(["uniform", "triangular", "epanechnikov"]),
              st.floats(0.1, 1.0), st.integers(10, 60)),
)


@pytest.fixture(scope="module")
def design_frame():
    # replication 1 survives all 600 days (replication 0 is absorbed at zero)
    path, _ = simulate_epidemic(Constant(0.2, 0.196), 5000, 85, 600, seed=0, replication=1)
    return RegressionFrame.from_counts(path.N2, 5000)


@settings(max_examples=60, deadline=None)
@given(schemes, st.lists(st.floats(-100, 100), min_size=1, max_size=60))
def test_gaussian_fit_is_weighted_average(scheme, obs):
    frame = RegressionFrame.from_series(obs)
    T = len(obs)
    fit = tlml_fit(GaussianMean(), frame, scheme, T, init=[5.0])
    assert fit.theta_hat[0] == pytest.approx(gaussian_closed_form(obs, scheme), abs=1e-10, rel=1e-12)
    assert fit.J_hat[0, 0] == 1.0


def test_gaussian_closed_form_examples():
    assert gaussian_closed_form([0.0, 1.0], WeightScheme.geometric(0.5)) == pytest.approx(2 / 3)
    assert gaussian_closed_form([3.0] * 7, WeightScheme.hyperbolic(1.0)) == pytest.approx(3.0)
    assert gaussian_closed_form([1.0, 2.0, 6.0], WeightScheme.uniform()) == pytest.approx(3.0)


def test_weighted_objective_oracle():
    frame = RegressionFrame.from_counts([50, 60, 55, 70], 1000)
    theta = np.array([0.3, 0.7])
    w = [0.25, 0.5, 1.0]
    y, z = frame.window(3)
    ref = sum(wi * poisson_logl(yi, zi, theta) for wi, yi, zi in zip(w, y, z)) / sum(w)
    got = weighted_objective(PoissonGlim(), frame, WeightScheme.geometric(0.5), 3, theta)
    assert got == pytest.approx(ref, rel=1e-14)
    one = weighted_objective(PoissonGlim(), frame, WeightScheme.rolling(1), 3, theta)
    assert one == pytest.approx(poisson_logl(y[-1], z[-1], theta))


def test_one_sidedness(design_frame):
    scheme = WeightScheme.geometric(0.9)
    before = tlml_fit(PoissonGlim(), design_frame, scheme, 300)
    y = design_frame.y.copy()
    y[301] += 40
    shocked = RegressionFrame.from_counts(y, 5000)
    after = tlml_fit(PoissonGlim(), shocked, scheme, 300)
    assert np.array_equal(before.theta_hat, after.theta_hat)


def test_rolling_covering_sample_equals_uniform(design_frame):
    a = tlml_fit(PoissonGlim(), design_frame, WeightScheme.uniform(), 250)
    b = tlml_fit(PoissonGlim(), design_frame, WeightScheme.rolling(400), 250)
    assert np.array_equal(a.theta_hat, b.theta_hat)


@pytest.mark.parametrize("model", [PoissonGlim(), PoissonGaussianGlim()], ids=lambda m: m.name)
@pytest.mark.parametrize("rho", [0.1, 0.5, 0.9])
def test_fits_match_reference_optimiser(design_frame, model, rho):
    scheme = WeightScheme.geometric(rho)
    for T in (120, 260, 410, 600):
        fit = tlml_fit(model, design_frame, scheme, T)
        assert fit.converged
        ref = optimize.minimize(lambda t: -weighted_objective(model, design_frame, scheme, T, t), [0.5, 0.5],
                                bounds=[(1e-6, 1 - 1e-6)] * 2, method="L-BFGS-B",
                                options={"ftol": 1e-16, "gtol": 1e-14, "maxiter": 10_000})
        assert fit.loglik >= -ref.fun - 1e-10


def test_converged_fit_satisfies_first_order_conditions(design_frame):
    fe = functional_estimate(PoissonGlim(), design_frame, WeightScheme.geometric(0.9), 100)
    for f in fe.fits:
        assert f.converged
        if not f.any_bound_hit:
            assert f.foc_norm <= 1e-8 * 10
        np.testing.assert_array_equal(f.J_hat, f.J_hat.T)
        assert f.eigenvalues[0] >= f.eigenvalues[1]


@pytest.mark.parametrize("rho", [0.1, 0.5, 0.9])
def test_warm_and_cold_starts_agree(design_frame, rho):
    scheme = WeightScheme.geometric(rho)
    warm = functional_estimate(PoissonGlim(), design_frame, scheme, 100, warm_start=True)
    cold = functional_estimate(PoissonGlim(), design_frame, scheme, 100, warm_start=False)
    assert np.max(np.abs(warm.theta() - cold.theta())) < 1e-8


def test_objective_never_decreases_along_iterations(design_frame):
    # truncating the iteration budget can only give lower objectives
    scheme = WeightScheme.geometric(0.9)
    values = [tlml_fit(PoissonGlim(), design_frame, scheme, 350, opts=FitOptions(max_iter=k)).loglik
              for k in range(1, 12)]
    assert all(b >= a - 1e-12 for a, b in zip(values, values[1:]))


def test_consistency_on_identifying_design():
    theta0 = np.array([0.2, 0.804])
    path, _ = simulate_epidemic(Constant(0.2, 0.196), 50_000, 25_000, 10_000, seed=1)
    frame = RegressionFrame.from_counts(path.N2, 50_000)
    fit = tlml_fit(PoissonGlim(), frame, WeightScheme.uniform(), 10_000)
    assert fit.converged and not fit.any_bound_hit
    assert np.max(np.abs(fit.theta_hat - theta0)) < 0.01
    assert fit.foc_norm < 1e-8 * 10


def test_terminal_spike_pushes_a_to_bound(design_frame):
    y = design_frame.y[:301].copy()
    y[-1] = 400
    frame = RegressionFrame.from_counts(y, 5000)
    fit = tlml_fit(PoissonGlim(), frame, WeightScheme.geometric(0.9), 300)
    assert fit.theta_hat[0] == 1 - 1e-6
    assert fit.bound_hit[0]


def test_degenerate_window_is_not_converged():
    frame = RegressionFrame.from_counts([40, 45, 47], 1000)
    fit = tlml_fit(PoissonGlim(), frame, WeightScheme.rolling(1), 2)
    assert not fit.converged
    assert fit.n_used == 1


def test_extinct_window_raises():
    frame = RegressionFrame.from_counts([0, 0, 0], 100)
    with pytest.raises(DomainError):
        tlml_fit(PoissonGlim(), frame, WeightScheme.uniform(), 2)


def test_functional_estimate_records_failures():
    path = np.array([5, 3, 4, 2, 0, 0, 0])
    frame = RegressionFrame.from_counts(path, 100)
    fe = functional_estimate(PoissonGlim(), frame, WeightScheme.uniform(), 2)
    # dates 5 and 6 follow the absorption at zero
    assert [int(t) for t in fe.errors] == [5, 6]
    assert fe.fits[-1] is None and np.isnan(fe.theta()[-1]).all()
    assert fe.fits[0] is not None


def test_ilml_iteration_reaches_full_solution(design_frame):
    scheme = WeightScheme.uniform()
    frame = RegressionFrame.from_counts(simulate_epidemic(Constant(0.2, 0.196), 50_000, 25_000, 400, seed=2)[0].N2,
                                        50_000)
    fit = tlml_fit(PoissonGlim(), frame, scheme, 400)
    theta = np.array([0.3, 0.7])
    for _ in range(50):
        theta = ilml_step(PoissonGlim(), frame, scheme, 400, theta)
    assert np.max(np.abs(theta - fit.theta_hat)) < 1e-6
    assert np.allclose(ilml_step(PoissonGlim(), frame, scheme, 400, fit.theta_hat), fit.theta_hat, atol=1e-12)


def test_ilml_gaussian_single_step_is_exact():
    obs = np.random.default_rng(4).normal(size=40)
    frame = RegressionFrame.from_series(obs)
    scheme = WeightScheme.geometric(0.8)
    step = ilml_step(GaussianMean(), frame, scheme, 40, [17.0])
    assert step[0] == pytest.approx(gaussian_closed_form(obs, scheme), abs=1e-12)


def test_rolling_ols_exact_fit_and_oracle():
    rng = np.random.default_rng(5)
    prev = rng.integers(10, 1000, 50).astype(float)
    frame = RegressionFrame.from_counts(prev, 2000)
    theta0 = np.array([0.25, 0.6])
    frame.y[1:] = frame.z[1:] @ theta0
    assert np.allclose(rolling_ols_fit(frame, 20, 49).theta, theta0, atol=1e-10)
    frame.y[1:] += rng.normal(size=49)
    fit = rolling_ols_fit(frame, 30, 49)
    Z, y = frame.z[20:50], frame.y[20:50]
    assert np.allclose(fit.theta, np.linalg.solve(Z.T @ Z, Z.T @ y), atol=1e-10)
    assert fit.n_obs == 30 and not fit.singular


def test_rolling_ols_singular_flag():
    frame = RegressionFrame.from_counts([10, 10, 10, 10], 10_000_000)
    frame.z[1:, 0] = frame.z[1:, 1]
    assert rolling_ols_fit(frame, 3, 3).singular


def test_rolling_ols_correlates_with_tlml(design_frame):
    # only the intensity slope a (1 - y/n) + (1 - c) is well identified on this design
    scheme = WeightScheme.rolling(50)
    fe = functional_estimate(PoissonGlim(), design_frame, scheme, 100)
    ols = np.array([rolling_ols_fit(design_frame, 50, int(t)).theta for t in fe.dates])
    share = 1.0 - design_frame.y[fe.dates - 1] / 5000
    slope_ols = ols[:, 0] * share + ols[:, 1]
    slope_tlml = fe.theta()[:, 0] * share + fe.theta()[:, 1]
    assert np.corrcoef(slope_ols, slope_tlml)[0, 1] > 0.2
