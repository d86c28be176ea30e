import numpy as np
import pytest
from scipy import integrate, stats

from qaoa_control import distributions as dist
from qaoa_control.exceptions import DomainError
from qaoa_control.verify import check_categorical_entropy, check_density_normalization, check_distribution_gradients


def test_clamp_unit():
    assert np.allclose(dist.clamp_unit([0.0, 0.5, 1.0]), [1e-6, 0.5, 1 - 1e-6])


@pytest.mark.parametrize("x", [0.0, 1.0, -0.2, np.nan])
def test_log_prob_rejects_points_outside_open_interval(x):
    with pytest.raises(DomainError):
        dist.sg_log_prob(x, dist.SigmoidGaussianParams(0.0, 1.0))
    with pytest.raises(DomainError):
        dist.beta_log_prob(x, dist.BetaParams(2.0, 2.0))


def test_parameter_validation():
    with pytest.raises(DomainError):
        dist.SigmoidGaussianParams(0.0, 0.0)
    with pytest.raises(DomainError):
        dist.BetaParams(-1.0, 1.0)


def test_sigmoid_gaussian_integrates_to_one():
    total, _ = integrate.quad(
        lambda x: np.exp(dist.sg_log_prob(x, dist.SigmoidGaussianParams(0.0, 1.0))), 0.0, 1.0, epsabs=1e-12
    )
    assert total == pytest.approx(1.0, abs=1e-6)


def test_beta_matches_scipy():
    x = np.linspace(0.05, 0.95, 7)
    p = dist.BetaParams(2.5, 1.5)
    assert np.allclose(dist.beta_log_prob(x, p), stats.beta.logpdf(x, 2.5, 1.5))
    assert dist.beta_entropy(p) == pytest.approx(stats.beta.entropy(2.5, 1.5))
    assert dist.beta_mean(p) == pytest.approx(2.5 / 4.0)


@pytest.mark.parametrize("kappa,xi,x", [(0.3, 0.7, 0.2), (-2.0, 2.5, 0.9), (1.0, 0.1, 0.7)])
def test_sg_gradient_matches_finite_difference(kappa, xi, x):
    h = 1e-6
    d_kappa, d_xi = dist.sg_grad_log_prob(x, dist.SigmoidGaussianParams(kappa, xi))
    f = lambda k, s: float(dist.sg_log_prob(x, dist.SigmoidGaussianParams(k, s)))  # noqa: E731
    assert d_kappa == pytest.approx((f(kappa + h, xi) - f(kappa - h, xi)) / (2 * h), rel=1e-5, abs=1e-6)
    assert d_xi == pytest.approx((f(kappa, xi + h) - f(kappa, xi - h)) / (2 * h), rel=1e-5, abs=1e-6)


@pytest.mark.parametrize(
    "check", [check_density_normalization, check_distribution_gradients, check_categorical_entropy]
)
def test_distribution_property_checks(check):
    passed, detail = check(frozenset())
    assert passed, detail


def test_sg_median_and_greedy(rng):
    samples = dist.sg_sample(dist.SigmoidGaussianParams(0.0, 1.0), rng, size=100_000)
    assert np.median(samples) == pytest.approx(0.5, abs=0.01)
    assert dist.sg_greedy(dist.SigmoidGaussianParams(0.0, 3.0)) == pytest.approx(0.5)


def test_sg_log_prob_at_the_center():
    value = dist.sg_log_prob(0.5, dist.SigmoidGaussianParams(0.0, 1.0))
    assert value == pytest.approx(np.log(4.0) - 0.5 * np.log(2 * np.pi), abs=1e-12)
    assert value == pytest.approx(0.4674, abs=1e-4)


@pytest.mark.parametrize(
    "sample, grad",
    [
        (lambda rng, n: dist.sg_sample(dist.SigmoidGaussianParams(0.3, 0.8), rng, size=n),
         lambda x: dist.sg_grad_log_prob(x, dist.SigmoidGaussianParams(0.3, 0.8))),
        (lambda rng, n: dist.beta_sample(dist.BetaParams(2.0, 3.0), rng, size=n),
         lambda x: dist.beta_grad_log_prob(x, dist.BetaParams(2.0, 3.0))),
    ],
    ids=["sigmoid_gaussian", "beta"],
)
def test_score_function_has_zero_mean(rng, sample, grad):
    n = 100_000
    for component in grad(sample(rng, n)):
        error = np.std(component) / np.sqrt(n)
        assert abs(np.mean(component)) < 4 * error


def test_samples_stay_inside_clamp(rng):
    samples = dist.sg_sample(dist.SigmoidGaussianParams(40.0, 0.1), rng, size=100)
    assert np.all(samples <= 1 - 1e-6)
    samples = dist.beta_sample(dist.BetaParams(0.01, 5.0), rng, size=1000)
    assert np.all(samples >= 1e-6)


def test_special_functions():
    assert dist.digamma(1.0) == pytest.approx(-0.5772156649, abs=1e-10)
    x = np.array([1e-3, 0.5, 3.7, 250.0])
    assert np.allclose(dist.digamma(x + 1), dist.digamma(x) + 1 / x, atol=1e-12)
    assert dist.log_gamma(5.0) == pytest.approx(np.log(24.0))
    with pytest.raises(DomainError):
        dist.log_gamma(0.0)


def test_categorical_normalization_check():
    with pytest.raises(DomainError):
        dist.CategoricalParams(np.zeros(2))
    p = dist.CategoricalParams.from_logits(np.array([1.0, 2.0, 3.0]))
    assert p.probs.sum() == pytest.approx(1.0)


def test_masked_log_probs():
    z = np.log(np.full(4, 0.25))
    masked = dist.masked_log_probs(z, np.array([True, False, True, True]))
    assert np.exp(masked[1]) == 0.0
    assert np.allclose(np.exp(masked[[0, 2, 3]]), 1 / 3)
    with pytest.raises(DomainError):
        dist.masked_log_probs(z, np.zeros(4, dtype=bool))


def test_categorical_uniform_frequencies(rng):
    n, k = 100_000, 5
    log_probs = np.full((n, k), -np.log(k))
    draws = dist.categorical_sample_batch(log_probs, np.ones((n, k), dtype=bool), rng)
    counts = np.bincount(draws, minlength=k)
    sigma = np.sqrt(n * 0.2 * 0.8)
    assert np.all(np.abs(counts - n / k) < 4 * sigma)


def test_categorical_never_draws_masked_action(rng):
    p = dist.CategoricalParams.from_logits(np.array([5.0, 0.0, 0.0]))
    mask = np.array([False, True, True])
    draws = {dist.categorical_sample(p, mask, rng) for _ in range(500)}
    assert draws <= {1, 2}


def test_categorical_entropy_uniform():
    assert dist.categorical_entropy(np.full(6, -np.log(6))) == pytest.approx(np.log(6))
