import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quasipost import (
    Dataset,
    LinkFunction,
    QuasiModel,
    VarianceFunction,
    expected_information,
    mean_vector,
    quasi_loglik,
    quasi_loglik_quadrature,
    quasi_score,
)
from quasipost.errors import (
    DomainError,
    QuadratureError,
    SingularInformationError,
    ValidationError,
)
from quasipost.model import adaptive_simpson, loglik_terms

from conftest import NAMED_PAIRS, random_problem


def ds(y, X):
    return Dataset(np.atleast_1d(np.asarray(y, float)), np.atleast_2d(np.asarray(X, float)))


class TestLinks:
    def test_identity_zero_coefficient(self):
        m = QuasiModel.from_names("identity", "constant")
        np.testing.assert_array_equal(mean_vector(m, [[1.0], [2.0]], [0.0]), [0.0, 0.0])

    def test_log_at_zero(self):
        m = QuasiModel.from_names("log", "mu")
        assert mean_vector(m, [[1.0]], [0.0])[0] == 1.0

    def test_logit_value(self):
        m = QuasiModel.from_names("logit", "binom")
        expected = math.exp(2.0) / (1.0 + math.exp(2.0))
        assert round(expected, 6) == 0.880797
        assert mean_vector(m, [[1.0]], [2.0])[0] == pytest.approx(0.880797, abs=5e-7)

    @pytest.mark.parametrize("kind", ["identity", "log", "logit"])
    def test_round_trip_moderate(self, kind):
        link = LinkFunction(kind)
        eta = np.linspace(-5.0, 5.0, 201)
        mu, clamps = link.inverse(eta)
        assert clamps == 0
        np.testing.assert_allclose(link(mu), eta, atol=1e-12 * 30)

    @pytest.mark.parametrize("kind", ["identity", "log"])
    def test_round_trip_wide(self, kind):
        link = LinkFunction(kind)
        eta = np.linspace(-30.0, 30.0, 601)
        np.testing.assert_allclose(link(link.inverse(eta)[0]), eta, atol=1e-12 * 30, rtol=0)

    def test_logit_clamped_outside_unit_interval(self):
        link = LinkFunction("logit")
        eta = np.array([-30.0, -20.0, 0.0, 20.0, 30.0])
        mu, clamps = link.inverse(eta)
        assert clamps == 2
        assert mu[0] == 1e-12 and mu[-1] == 1 - 1e-12
        # unclamped interior points still invert
        np.testing.assert_allclose(link(mu[1:4]), eta[1:4], rtol=1e-6)

    def test_log_clamps_extreme_eta(self):
        mu, clamps = LinkFunction("log").inverse(np.array([800.0, 0.0]))
        assert clamps == 1 and np.isfinite(mu).all()

    @pytest.mark.parametrize("kind", ["identity", "log", "logit"])
    def test_derivative_positive_and_matches_fd(self, kind):
        link = LinkFunction(kind)
        mu = {"identity": np.linspace(-3, 3, 13), "log": np.linspace(0.1, 5, 13),
              "logit": np.linspace(0.05, 0.95, 13)}[kind]
        assert np.all(link.deriv(mu) > 0)
        h = 1e-6
        np.testing.assert_allclose(link.deriv(mu), (link(mu + h) - link(mu - h)) / (2 * h), rtol=1e-6)
        np.testing.assert_allclose(link.deriv2(mu), (link.deriv(mu + h) - link.deriv(mu - h)) / (2 * h),
                                   rtol=1e-5, atol=1e-8)

    def test_unknown_link(self):
        with pytest.raises(ValidationError):
            LinkFunction("probit")


class TestVarianceFunctions:
    @pytest.mark.parametrize("kind,param", [("mu_pow", 2.0), ("mu_pow", 1.5), ("nb", 0.0), ("nb", -1.0),
                                            ("binom_pow", 0.0), ("mu_pow", None)])
    def test_restrictions_validated(self, kind, param):
        with pytest.raises(ValidationError):
            VarianceFunction(kind, param)

    def test_parameter_not_accepted_for_fixed_kind(self):
        with pytest.raises(ValidationError):
            VarianceFunction("mu", 2.0)

    @pytest.mark.parametrize("link,kind,param", NAMED_PAIRS)
    def test_positive_on_domain(self, link, kind, param):
        v = VarianceFunction(kind, param)
        lo, hi = v.domain
        lo = -50.0 if lo == -math.inf else lo
        hi = 50.0 if hi == math.inf else hi
        t = np.linspace(lo, hi, 103)[1:-1]
        assert np.all(v(t) > 0)

    @pytest.mark.parametrize("link,kind,param", NAMED_PAIRS)
    def test_derivative_matches_fd(self, link, kind, param):
        v = VarianceFunction(kind, param)
        t = np.array([0.2, 0.45, 0.7]) if v.domain == (0.0, 1.0) else np.array([0.3, 1.2, 2.5])
        h = 1e-6
        np.testing.assert_allclose(v.deriv(t), (v(t + h) - v(t - h)) / (2 * h), rtol=1e-6, atol=1e-9)

    def test_response_restriction_message(self):
        with pytest.raises(ValidationError, match="y >= 0"):
            VarianceFunction("mu").check_response([1.0, -2.0])
        with pytest.raises(ValidationError, match=r"y in \[0, 1\]"):
            VarianceFunction("binom").check_response([0.5, 1.5])

    def test_model_domain_compatibility(self):
        with pytest.raises(ValidationError):
            QuasiModel.from_names("logit", "mu")
        with pytest.raises(ValidationError):
            QuasiModel.from_names("log", "binom")
        QuasiModel.from_names("log", "constant")

    def test_identity_link_outside_domain(self):
        m = QuasiModel.from_names("identity", "mu")
        with pytest.raises(DomainError):
            mean_vector(m, [[1.0], [-1.0]], [1.0])


class TestQuasiLoglik:
    def test_constant_variance_row(self):
        m = QuasiModel.from_names("identity", "constant")
        assert quasi_loglik(m, ds([2.0], [[1.0]]), [1.0], 1.0) == pytest.approx(1.5, abs=1e-15)

    def test_poisson_row(self):
        m = QuasiModel.from_names("log", "mu")
        assert quasi_loglik(m, ds([0.0], [[1.0]]), [0.0], 1.0) == pytest.approx(-1.0, abs=1e-15)

    @pytest.mark.parametrize("link,kind,param", NAMED_PAIRS)
    def test_dispersion_is_a_global_factor(self, link, kind, param, rng):
        model, X, beta, y = random_problem(link, kind, param, 6, rng)
        data = Dataset(y, X)
        base = quasi_loglik(model, data, beta, 1.0)
        for c in (0.3, 2.0, 7.5):
            assert quasi_loglik(model, data, beta, c) == pytest.approx(base / c, rel=1e-13)

    def test_nonpositive_psi(self):
        m = QuasiModel.from_names("identity", "constant")
        with pytest.raises(ValidationError):
            quasi_loglik(m, ds([1.0], [[1.0]]), [0.0], 0.0)


class TestQuadrature:
    def test_constant_variance(self):
        v = VarianceFunction("constant")
        assert quasi_loglik_quadrature(v, 2.0, 1.0, 1.0) == pytest.approx(1.5, abs=1e-12)

    def test_empty_interval(self):
        for kind in ("constant", "mu", "binom"):
            v = VarianceFunction(kind)
            assert quasi_loglik_quadrature(v, 0.3, v.baseline, 1.0) == 0.0

    def test_linear_variance_on_one_two(self):
        v = VarianceFunction("mu")
        assert v.baseline == 1.0
        # antiderivative y log t - t on [1, 2] with y = 0
        assert quasi_loglik_quadrature(v, 0.0, 2.0, 1.0) == pytest.approx(-1.0, abs=1e-10)

    def test_custom_variance(self):
        v = VarianceFunction.custom(lambda t: 1.0 + t * t, (-math.inf, math.inf), 0.0)
        # integral of (y - t)/(1 + t^2) = y atan(t) - log(1 + t^2)/2
        y, mu = 0.7, 1.9
        expected = y * math.atan(mu) - 0.5 * math.log1p(mu * mu)
        assert quasi_loglik_quadrature(v, y, mu, 2.0) == pytest.approx(expected / 2.0, abs=1e-10)

    def test_reversed_interval_sign(self):
        f = lambda t: t**3
        assert adaptive_simpson(f, 2.0, 0.0) == pytest.approx(-4.0, abs=1e-10)

    def test_nonconvergence(self):
        with pytest.raises(QuadratureError):
            adaptive_simpson(lambda t: 1.0 / t if t else math.inf, 0.0, 1.0)

    def test_outside_domain(self):
        with pytest.raises(DomainError):
            quasi_loglik_quadrature(VarianceFunction("mu"), 1.0, -0.5)

    @pytest.mark.parametrize("kind,param", [("constant", None), ("mu", None), ("mu_sq", None), ("mu_pow", 3.0),
                                            ("exp_mu", None), ("binom", None), ("binom_sq", None), ("nb", 2.0)])
    def test_closed_form_matches_quadrature_up_to_constant(self, kind, param, rng):
        link = {"constant": "identity", "exp_mu": "identity"}.get(kind, "logit" if "binom" in kind else "log")
        model, X, _, y = random_problem(link, kind, param, 8, rng)
        v = model.variance
        diffs = []
        for _ in range(20):
            beta = rng.uniform(-0.5, 0.5, size=3)
            mu = mean_vector(model, X, beta)
            closed = float(np.sum(v.loglik_terms(y, mu)))
            quad = sum(quasi_loglik_quadrature(v, yi, mi) for yi, mi in zip(y, mu))
            diffs.append(closed - quad)
        assert max(diffs) - min(diffs) < 1e-8

    def test_quasi_loglik_custom_uses_quadrature(self):
        v = VarianceFunction.custom(lambda t: t, (0.0, math.inf), 1.0)
        m = QuasiModel(LinkFunction("log"), v)
        data = ds([3.0, 1.0], [[1.0], [1.0]])
        named = QuasiModel.from_names("log", "mu")
        d1 = quasi_loglik(m, data, [0.4]) - quasi_loglik(named, data, [0.4])
        d2 = quasi_loglik(m, data, [-0.2]) - quasi_loglik(named, data, [-0.2])
        assert d1 == pytest.approx(d2, abs=1e-9)


def central_gradient(f, x, h):
    g = np.empty_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        g[k] = (f(x + e) - f(x - e)) / (2 * h)
    return g


class TestScoreAndInformation:
    def test_score_value(self):
        m = QuasiModel.from_names("identity", "constant")
        np.testing.assert_allclose(quasi_score(m, ds([2.0], [[1.0]]), [1.0], 1.0), [1.0])

    def test_score_zero_at_exact_fit(self, rng):
        m = QuasiModel.from_names("log", "mu")
        X = np.column_stack([np.ones(5), rng.normal(size=5)])
        beta = np.array([0.3, -0.2])
        y = mean_vector(m, X, beta)
        np.testing.assert_array_equal(quasi_score(m, Dataset(y, X), beta), 0.0)

    @pytest.mark.parametrize("n", [5, 20])
    @pytest.mark.parametrize("link,kind,param", NAMED_PAIRS)
    def test_gradient_consistency(self, link, kind, param, n, rng):
        model, X, beta, y = random_problem(link, kind, param, n, rng)
        data = Dataset(y, X)
        h = 1e-3 if kind == "binom_pow" else 1e-6
        fd = central_gradient(lambda b: quasi_loglik(model, data, b, 1.7), beta, h)
        an = quasi_score(model, data, beta, 1.7)
        assert np.max(np.abs(fd - an)) / np.max(np.abs(an)) < 1e-5

    @pytest.mark.parametrize("link,kind", [("identity", "constant"), ("log", "mu"), ("logit", "binom")])
    def test_curvature_identity_for_canonical_pairs(self, link, kind, rng):
        model, X, beta, y = random_problem(link, kind, None, 20, rng)
        data = Dataset(y, X)
        psi = 1.3
        hess = np.column_stack([
            central_gradient(lambda b: quasi_score(model, data, b, psi)[k], beta, 1e-6) for k in range(3)
        ])
        info = expected_information(model, data, beta, psi)
        np.testing.assert_allclose(-hess, info, rtol=1e-5)

    def test_identity_constant_information(self, rng):
        m = QuasiModel.from_names("identity", "constant")
        X = rng.normal(size=(10, 3))
        data = Dataset(rng.normal(size=10), X)
        np.testing.assert_allclose(expected_information(m, data, np.zeros(3), 2.0), X.T @ X / 2.0, rtol=1e-14)

    def test_poisson_information(self, rng):
        m = QuasiModel.from_names("log", "mu")
        X = np.column_stack([np.ones(10), rng.normal(size=10)])
        beta = np.array([0.2, 0.4])
        mu = np.exp(X @ beta)
        data = Dataset(rng.poisson(2.0, size=10), X)
        np.testing.assert_allclose(expected_information(m, data, beta, 1.0), X.T @ np.diag(mu) @ X, rtol=1e-13)

    @pytest.mark.parametrize("link,kind,param", NAMED_PAIRS)
    def test_doubling_psi_halves_information(self, link, kind, param, rng):
        model, X, beta, y = random_problem(link, kind, param, 8, rng)
        data = Dataset(y, X)
        np.testing.assert_allclose(expected_information(model, data, beta, 2.0),
                                   expected_information(model, data, beta, 1.0) / 2.0, rtol=1e-15)

    def test_rank_deficient_design(self):
        m = QuasiModel.from_names("identity", "constant")
        X = np.array([[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]])
        with pytest.raises(SingularInformationError):
            expected_information(m, Dataset([1.0, 2.0, 3.0], X), [0.0, 0.0])


class TestDataset:
    def test_shape_mismatch(self):
        with pytest.raises(ValidationError):
            Dataset([1.0, 2.0], [[1.0]])

    def test_groups_must_cover_range(self):
        with pytest.raises(ValidationError):
            Dataset([1.0, 2.0, 3.0], np.ones((3, 1)), groups=[1, 3, 3])
        d = Dataset([1.0, 2.0, 3.0], np.ones((3, 1)), groups=[2, 1, 2])
        assert d.n_groups == 2

    def test_non_finite(self):
        with pytest.raises(ValidationError):
            Dataset([1.0, np.nan], np.ones((2, 1)))


@settings(max_examples=60, deadline=None)
@given(eta=st.floats(-27.0, 27.0))
def test_logit_round_trip_property(eta):
    link = LinkFunction("logit")
    mu, _ = link.inverse(np.array([eta]))
    # conditioning of logit near 1 limits accuracy to ~eps / (1 - mu)
    tol = 1e-12 + 4e-16 / min(mu[0], 1 - mu[0])
    assert abs(float(link(mu)[0]) - eta) <= tol


@settings(max_examples=40, deadline=None)
@given(y=st.floats(0.0, 20.0), mu=st.floats(0.05, 20.0), psi=st.floats(0.1, 10.0))
def test_poisson_closed_form_vs_quadrature_property(y, mu, psi):
    v = VarianceFunction("mu")
    closed = (y * math.log(mu) - mu) - (y * math.log(1.0) - 1.0)
    assert quasi_loglik_quadrature(v, y, mu, psi) == pytest.approx(closed / psi, abs=1e-9)


def test_loglik_terms_broadcast():
    m = QuasiModel.from_names("log", "mu")
    y = np.array([1.0, 2.0])
    mu = np.array([[1.0, 2.0, 3.0], [0.5, 1.0, 1.5]])
    out = loglik_terms(m, y[:, None], mu)
    assert out.shape == (2, 3)
    assert out[1, 2] == pytest.approx(2.0 * math.log(1.5) - 1.5)
