import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from covop.covariance import sample_covariance
from covop.errors import ConfigError
from covop.models import (
    Dataset,
    EtaLaw,
    ModelSpec,
    ScoreLaw,
    SpectrumSpec,
    eigen_spectrum,
    population_covariance,
    sample_dataset,
    standardized_scores,
    truncation_dimension,
)
from covop.rng import stream


def test_eigen_spectrum_examples():
    np.testing.assert_allclose(eigen_spectrum(SpectrumSpec(1.0, 3)), [1.0, 0.25, 1 / 9], rtol=0, atol=1e-15)
    np.testing.assert_allclose(eigen_spectrum(SpectrumSpec(0.5, 2, 2.0)), [2.0, 1.0], rtol=0, atol=1e-15)
    lam = eigen_spectrum(SpectrumSpec(1.0, 64))
    assert lam[31] / lam[63] == 4.0


@given(st.floats(0.05, 4.0), st.integers(1, 200), st.floats(0.1, 10.0))
def test_spectrum_positive_decreasing(beta, p, scale):
    lam = SpectrumSpec(beta, p, scale).eigenvalues()
    assert lam.shape == (p,)
    assert np.all(lam > 0)
    assert np.all(np.diff(lam) < 0)
    j = np.arange(1, p + 1)
    np.testing.assert_allclose(lam * j ** (2 * beta) / scale, 1.0, rtol=1e-13)


@pytest.mark.parametrize("beta,p,scale", [(0.0, 3, 1.0), (-1.0, 3, 1.0), (1.0, 0, 1.0), (1.0, 3, 0.0)])
def test_spectrum_rejects_bad_params(beta, p, scale):
    with pytest.raises(ConfigError):
        SpectrumSpec(beta, p, scale)


def _tail_oracle(beta, p):
    # numeric tail sum plus an integral remainder, independent of the closed form used in the package
    j = np.arange(p + 1, 200_001, dtype=float)
    return float(np.sum(j ** (-2 * beta))) + 200_000.5 ** (1 - 2 * beta) / (2 * beta - 1)


def test_truncation_dimension_examples():
    assert truncation_dimension(1.0, 0.01) == 61
    p = truncation_dimension(2.0, 0.1)
    assert 1 <= p <= 9
    # the chosen p really leaves less than the tolerated tail
    zeta2 = math.pi**2 / 6
    assert _tail_oracle(1.0, 61) <= 0.01 * zeta2
    with pytest.raises(ConfigError):
        truncation_dimension(0.5, 0.1)
    with pytest.raises(ConfigError):
        truncation_dimension(1.0, 1.5)


def test_var_of_square_values():
    assert ScoreLaw("gaussian").var_of_square() == 2.0
    assert ScoreLaw("rademacher").var_of_square() == 0.0
    assert ScoreLaw("standardized_uniform").var_of_square() == pytest.approx(0.8, abs=1e-15)
    assert ScoreLaw("standardized_exponential").var_of_square() == 8.0
    # df=10: E t^4 = 3*100/(8*6) = 6.25, scaled by ((df-2)/df)^2 = 0.64 -> E zeta^4 = 4, var = 3
    assert ScoreLaw("standardized_student_t", 10.0).var_of_square() == pytest.approx(3.0, rel=1e-14)
    assert ScoreLaw("standardized_student_t", 4.0).var_of_square() == math.inf


def test_negative_controls():
    assert ScoreLaw("rademacher").is_negative_control
    assert ScoreLaw("standardized_student_t", 5.0).is_negative_control
    assert not ScoreLaw("standardized_student_t", 12.0).is_negative_control
    assert not ScoreLaw("gaussian").is_negative_control
    with pytest.raises(ConfigError):
        ScoreLaw("standardized_student_t", 2.0)
    with pytest.raises(ConfigError):
        ScoreLaw("gaussian", 5.0)


@pytest.mark.parametrize(
    "law",
    [
        ScoreLaw("gaussian"),
        ScoreLaw("standardized_uniform"),
        ScoreLaw("standardized_exponential"),
        ScoreLaw("rademacher"),
        ScoreLaw("standardized_student_t", 12.0),
    ],
)
def test_score_law_moments(law):
    n = 10**6
    z = law.sample(stream(11), n)
    assert abs(z.mean()) < 5 * z.std() / math.sqrt(n)
    se_var = math.sqrt(np.var(z * z)) / math.sqrt(n)
    # z.var() subtracts the squared sample mean, a bias of order 1/n (the only error for rademacher)
    assert abs(z.var() - 1.0) < 5 * se_var + 25.0 / n
    # var(zeta^2) against the closed form, 5 sigma with a plugin standard error
    z2 = z * z
    se = math.sqrt(np.var((z2 - z2.mean()) ** 2) / n)
    assert abs(z2.var() - law.var_of_square()) < 5 * se + 1e-12


def test_exponential_var_square_monte_carlo():
    # E zeta^4 = 9 for a centered Exp(1), so var(zeta^2) = 8
    z = ScoreLaw("standardized_exponential").sample(stream(3), 10**6)
    assert np.mean(z**4) - np.mean(z**2) ** 2 == pytest.approx(8.0, rel=0.05)


def test_eta_law_moments():
    p = 7
    for law in (EtaLaw("chi_squared_p"), EtaLaw("gamma_p_1"), EtaLaw("scaled_negative_binomial", 0.3)):
        e = law.sample(stream(5), p, 400_000)
        se = math.sqrt(law.var(p) / e.size)
        assert abs(e.mean() - p) < 5 * se
        assert e.var() == pytest.approx(law.var(p), rel=0.03)
    assert EtaLaw("chi_squared_p").r_p(p) == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(ConfigError):
        EtaLaw("scaled_negative_binomial", 1.0)
    with pytest.raises(ConfigError):
        EtaLaw("chi_squared_p").sample(stream(0), 0, 3)


def test_kl_column_variances():
    data = sample_dataset(ModelSpec.kl(1.0, 2), 10**5, seed=1)
    v = (data.values**2).mean(axis=0)
    # var of x^2 for a N(0, lam) coordinate is 2 lam^2
    se = np.sqrt(2 * np.array([1.0, 0.25]) ** 2 / data.n)
    assert np.all(np.abs(v - [1.0, 0.25]) < 3 * se)


def test_elliptical_chi2_marginals_are_gaussian():
    data = sample_dataset(ModelSpec.elliptical(0.5, 5, eta_law="chi_squared_p"), 10**5, seed=2)
    z = standardized_scores(data)
    assert stats.kstest(z[:, 0], "norm").pvalue > 1e-3
    assert stats.kstest(z[:, 4], "norm").pvalue > 1e-3


def test_elliptical_identity_covariance():
    for eta in ("gamma_p_1", "chi_squared_p"):
        data = sample_dataset(ModelSpec.elliptical(1.0, 4, eta_law=eta), 200_000, seed=4)
        z = standardized_scores(data)
        np.testing.assert_allclose(z.T @ z / data.n, np.eye(4), atol=0.02)


def test_rademacher_entries_are_two_point():
    data = sample_dataset(ModelSpec.kl(1.0, 3, score_law="rademacher"), 50, seed=0)
    lam = SpectrumSpec(1.0, 3).eigenvalues()
    np.testing.assert_array_equal(np.abs(data.values), np.broadcast_to(np.sqrt(lam), (50, 3)))


def test_population_covariance_examples():
    np.testing.assert_array_equal(population_covariance(ModelSpec.kl(1.0, 2)), np.diag([1.0, 0.25]))
    np.testing.assert_array_equal(
        population_covariance(ModelSpec.elliptical(1.0, 3)), population_covariance(ModelSpec.kl(1.0, 3))
    )


@pytest.mark.parametrize(
    "model",
    [
        ModelSpec.kl(1.0, 3, score_law="standardized_exponential"),
        ModelSpec.elliptical(1.0, 3, eta_law="gamma_p_1"),
        ModelSpec.mp(1.0, 3, score_law="standardized_uniform"),
    ],
)
def test_sample_covariance_converges(model):
    n = 10**6
    data = sample_dataset(model, n, seed=0)
    x = data.values
    sigma = population_covariance(model)
    prods = x[:, :, None] * x[:, None, :]
    se = prods.reshape(n, -1).std(axis=0).reshape(3, 3) / math.sqrt(n)
    assert np.all(np.abs(sample_covariance(data) - sigma) < 4 * se + 1e-15)


def test_sample_dataset_is_deterministic():
    m = ModelSpec.elliptical(1.0, 6, eta_law="scaled_negative_binomial", tau=0.4)
    a = sample_dataset(m, 30, seed=77)
    b = sample_dataset(m, 30, seed=77)
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, sample_dataset(m, 30, seed=78).values)


def test_dataset_validation():
    m = ModelSpec.kl(1.0, 3)
    with pytest.raises(ConfigError):
        Dataset(np.zeros((1, 3)), m, 0)
    with pytest.raises(ConfigError):
        Dataset(np.zeros((5, 2)), m, 0)
    d = sample_dataset(m, 5, 0)
    with pytest.raises(ValueError):
        d.values[0, 0] = 1.0
    with pytest.raises(ConfigError):
        sample_dataset(m, 1, 0)


@pytest.mark.parametrize(
    "model",
    [
        ModelSpec.kl(1.5, 10, score_law="standardized_student_t", df=9.0),
        ModelSpec.mp(0.25, 300),
        ModelSpec.elliptical(1.0, 5, eta_law="scaled_negative_binomial", tau=0.5),
    ],
)
def test_model_json_round_trip(model):
    d = json.loads(json.dumps(model.to_dict()))
    assert ModelSpec.from_dict(d) == model


def test_model_from_dict_names_missing_key():
    with pytest.raises(ConfigError) as err:
        ModelSpec.from_dict({"family": "kl", "p": 3})
    assert err.value.key == "beta"
    assert "beta" in str(err.value)
    with pytest.raises(ConfigError):
        ModelSpec.from_dict({"family": "kl", "beta": 1.0, "p": 3, "eta_law": "gamma_p_1"})
    with pytest.raises(ConfigError):
        ModelSpec.from_dict({"family": "weird", "beta": 1.0, "p": 3})


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 40), st.integers(1, 8), st.integers(0, 2**63))
def test_rows_have_model_shape(n, p, seed):
    data = sample_dataset(ModelSpec.kl(1.0, p, score_law="standardized_uniform"), n, seed)
    assert data.values.shape == (n, p)
    lam = SpectrumSpec(1.0, p).eigenvalues()
    assert np.all(np.abs(data.values) <= math.sqrt(3) * np.sqrt(lam) + 1e-12)
