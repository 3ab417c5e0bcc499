"""Second-order GLM specification: links, variance functions, quasi-likelihood.

A quasi-model fixes only the mean ``mu_i = g^{-1}(x_i' beta)`` and the variance
``psi * V(mu_i)``.  The log-quasi-likelihood of one observation is the integral
of ``(y - t) / (psi V(t))`` from a baseline ``a`` to ``mu``.  Named variance
families use closed-form antiderivatives (additive constants independent of
``beta`` dropped); everything else goes through adaptive quadrature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import expit

from .errors import (
    DomainError,
    EvaluationError,
    QuadratureError,
    SingularInformationError,
    ValidationError,
)

LOGIT_EPS = 1e-12
ETA_MAX = 700.0

_INF = math.inf


@dataclass(frozen=True)
class LinkFunction:
    """Strictly monotone link ``g`` mapping the mean to the linear predictor.

    Parameters
    ----------
    kind : {"identity", "log", "logit"}
    """

    kind: str

    def __post_init__(self):
        if self.kind not in ("identity", "log", "logit"):
            raise ValidationError(f"unknown link {self.kind!r}")

    @property
    def mean_range(self):
        return {"identity": (-_INF, _INF), "log": (0.0, _INF), "logit": (0.0, 1.0)}[self.kind]

    def __call__(self, mu):
        mu = np.asarray(mu, dtype=float)
        if self.kind == "identity":
            return mu.copy()
        if self.kind == "log":
            return np.log(mu)
        return np.log(mu) - np.log1p(-mu)

    def inverse(self, eta):
        """Return ``(mu, n_clamped)`` with the clamping policy applied."""
        eta = np.asarray(eta, dtype=float)
        if self.kind == "identity":
            return eta.copy(), 0
        if self.kind == "log":
            clipped = np.clip(eta, -ETA_MAX, ETA_MAX)
            return np.exp(clipped), int(np.count_nonzero(clipped != eta))
        mu = expit(eta)
        clipped = np.clip(mu, LOGIT_EPS, 1.0 - LOGIT_EPS)
        return clipped, int(np.count_nonzero(clipped != mu))

    def deriv(self, mu):
        """g'(mu)."""
        mu = np.asarray(mu, dtype=float)
        if self.kind == "identity":
            return np.ones_like(mu)
        if self.kind == "log":
            return 1.0 / mu
        return 1.0 / (mu * (1.0 - mu))

    def deriv2(self, mu):
        """g''(mu)."""
        mu = np.asarray(mu, dtype=float)
        if self.kind == "identity":
            return np.zeros_like(mu)
        if self.kind == "log":
            return -1.0 / mu**2
        return (2.0 * mu - 1.0) / (mu * (1.0 - mu)) ** 2


# kind -> (mean domain, baseline a, response restriction)
_FAMILIES = {
    "constant": ((-_INF, _INF), 0.0, None),
    "mu": ((0.0, _INF), 1.0, "nonneg"),
    "mu_sq": ((0.0, _INF), 1.0, "nonneg"),
    "mu_pow": ((0.0, _INF), 1.0, "nonneg"),
    "exp_mu": ((-_INF, _INF), 0.0, None),
    "binom": ((0.0, 1.0), 0.5, "unit"),
    "binom_sq": ((0.0, 1.0), 0.5, "unit"),
    "binom_pow": ((0.0, 1.0), 0.5, "unit"),
    "nb": ((0.0, _INF), 1.0, "nonneg"),
}

_CLOSED_FORM = {"constant", "mu", "mu_sq", "mu_pow", "exp_mu", "binom", "binom_sq", "nb"}

_RESTRICTION_TEXT = {"nonneg": "y >= 0", "unit": "y in [0, 1]"}


@dataclass(frozen=True)
class VarianceFunction:
    """Variance function ``V`` together with its mean domain and baseline.

    ``param`` holds the exponent ``p`` for ``mu_pow``, ``q`` for ``binom_pow``
    and ``k`` for ``nb``.  Use :meth:`custom` for a user-supplied ``V``.
    """

    kind: str
    param: Optional[float] = None
    func: Optional[Callable[[float], float]] = field(default=None, compare=False)
    custom_domain: Optional[tuple] = None
    custom_baseline: Optional[float] = None

    def __post_init__(self):
        kind = self.kind
        if kind == "custom":
            if self.func is None or self.custom_domain is None:
                raise ValidationError("custom variance needs func and domain")
            lo, hi = self.custom_domain
            a = self.custom_baseline
            if a is None or not lo < a < hi:
                raise ValidationError("custom baseline must lie inside the domain")
            return
        if kind not in _FAMILIES:
            raise ValidationError(f"unknown variance kind {kind!r}")
        if kind == "mu_pow":
            if self.param is None or not self.param > 2:
                raise ValidationError("mu_pow requires p > 2")
        elif kind == "binom_pow":
            if self.param is None or not self.param > 0:
                raise ValidationError("binom_pow requires q > 0")
        elif kind == "nb":
            if self.param is None or not self.param > 0:
                raise ValidationError("nb requires k > 0")
        elif self.param is not None:
            raise ValidationError(f"variance kind {kind!r} takes no parameter")

    @classmethod
    def custom(cls, func, domain, baseline):
        return cls("custom", func=func, custom_domain=tuple(domain), custom_baseline=float(baseline))

    @property
    def domain(self):
        if self.kind == "custom":
            return self.custom_domain
        return _FAMILIES[self.kind][0]

    @property
    def baseline(self):
        if self.kind == "custom":
            return self.custom_baseline
        return _FAMILIES[self.kind][1]

    @property
    def has_closed_form(self):
        return self.kind in _CLOSED_FORM

    def __call__(self, mu):
        mu = np.asarray(mu, dtype=float)
        kind, c = self.kind, self.param
        if kind == "constant":
            return np.ones_like(mu)
        if kind == "mu":
            return mu.copy()
        if kind == "mu_sq":
            return mu**2
        if kind == "mu_pow":
            return mu**c
        if kind == "exp_mu":
            return np.exp(mu)
        if kind == "binom":
            return mu * (1.0 - mu)
        if kind == "binom_sq":
            return (mu * (1.0 - mu)) ** 2
        if kind == "binom_pow":
            return (mu * (1.0 - mu)) ** c
        if kind == "nb":
            return mu + mu**2 / c
        return np.vectorize(self.func, otypes=[float])(mu)

    def deriv(self, mu):
        """V'(mu); central differences for custom variance functions."""
        mu = np.asarray(mu, dtype=float)
        kind, c = self.kind, self.param
        if kind == "constant":
            return np.zeros_like(mu)
        if kind == "mu":
            return np.ones_like(mu)
        if kind == "mu_sq":
            return 2.0 * mu
        if kind == "mu_pow":
            return c * mu ** (c - 1.0)
        if kind == "exp_mu":
            return np.exp(mu)
        if kind == "binom":
            return 1.0 - 2.0 * mu
        if kind == "binom_sq":
            return 2.0 * mu * (1.0 - mu) * (1.0 - 2.0 * mu)
        if kind == "binom_pow":
            return c * (mu * (1.0 - mu)) ** (c - 1.0) * (1.0 - 2.0 * mu)
        if kind == "nb":
            return 1.0 + 2.0 * mu / c
        h = 1e-6 * np.maximum(1.0, np.abs(mu))
        return (self(mu + h) - self(mu - h)) / (2.0 * h)

    def check_response(self, y):
        """Raise ValidationError if ``y`` breaks the family's restriction."""
        restriction = None if self.kind == "custom" else _FAMILIES[self.kind][2]
        y = np.asarray(y, dtype=float)
        if restriction == "nonneg":
            bad = np.flatnonzero(y < 0)
        elif restriction == "unit":
            bad = np.flatnonzero((y < 0) | (y > 1))
        else:
            return
        if bad.size:
            raise ValidationError(
                f"variance {self.kind!r} requires {_RESTRICTION_TEXT[restriction]}; "
                f"violated at observation {int(bad[0])} (y={y[bad[0]]!r})"
            )

    def loglik_terms(self, y, mu):
        """Unit-dispersion closed-form contributions (broadcasting)."""
        kind, c = self.kind, self.param
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            if kind == "constant":
                return y * mu - 0.5 * mu**2
            if kind == "mu":
                return y * np.log(mu) - mu
            if kind == "mu_sq":
                return -y / mu - np.log(mu)
            if kind == "mu_pow":
                return y * mu ** (1.0 - c) / (1.0 - c) - mu ** (2.0 - c) / (2.0 - c)
            if kind == "exp_mu":
                return (mu - y + 1.0) * np.exp(-mu)
            if kind == "binom":
                return y * np.log(mu) + (1.0 - y) * np.log1p(-mu)
            if kind == "binom_sq":
                odds = np.log(mu) - np.log1p(-mu)
                return (2.0 * y - 1.0) * odds + (2.0 * y - 1.0) / (1.0 - mu) - y / (mu * (1.0 - mu))
            if kind == "nb":
                return y * np.log(mu / (c + mu)) - c * np.log(c + mu)
        raise ValidationError(f"variance {kind!r} has no closed form")


def _binom_type(variance):
    return variance.domain == (0.0, 1.0)


@dataclass(frozen=True)
class QuasiModel:
    """A (link, variance) pair defining the second-order assumptions."""

    link: LinkFunction
    variance: VarianceFunction

    def __post_init__(self):
        kind = self.link.kind
        lo, hi = self.variance.domain
        if kind == "logit" and not _binom_type(self.variance):
            raise ValidationError("logit link requires a variance family on (0, 1)")
        if kind == "log" and (lo > 0.0 or hi < _INF):
            raise ValidationError("log link requires a variance family defined on (0, inf)")

    @classmethod
    def from_names(cls, link, variance, param=None):
        return cls(LinkFunction(link), VarianceFunction(variance, param))


@dataclass
class Dataset:
    """Responses ``y``, design ``X`` and optional 1-based group labels."""

    y: np.ndarray
    X: np.ndarray
    groups: Optional[np.ndarray] = None

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float).reshape(-1)
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        self.X = X
        if X.ndim != 2 or X.shape[0] != self.y.size:
            raise ValidationError(f"X has shape {X.shape}, expected ({self.y.size}, p)")
        if self.y.size < 1 or X.shape[1] < 1:
            raise ValidationError("need n >= 1 and p >= 1")
        if not (np.all(np.isfinite(self.y)) and np.all(np.isfinite(X))):
            raise ValidationError("y and X must be finite")
        if self.groups is not None:
            g = np.asarray(self.groups)
            if g.shape != self.y.shape or not np.all(g == np.round(g)):
                raise ValidationError("groups must be n integer labels")
            g = g.astype(int)
            J = int(g.max())
            if g.min() < 1 or np.unique(g).size != J:
                raise ValidationError("group labels must cover 1..J with every group present")
            self.groups = g

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    @property
    def n_groups(self):
        return 0 if self.groups is None else int(self.groups.max())


def validate(model, data):
    """Check the response restriction of the variance family."""
    model.variance.check_response(data.y)


def _check_domain(model, mu):
    lo, hi = model.variance.domain
    bad = np.flatnonzero(~((mu > lo) & (mu < hi)))
    if bad.size:
        i = int(bad[0])
        raise DomainError(f"mean {mu[i]!r} at observation {i} outside ({lo}, {hi})")


def means_from_eta(model, eta):
    """Means for a linear predictor, returning ``(mu, n_clamped)``."""
    mu, clamps = model.link.inverse(eta)
    if model.link.kind == "identity":
        _check_domain(model, np.ravel(mu))
    return mu, clamps


def mean_vector(model, X, beta):
    """Means ``g^{-1}(X beta)`` with clamping applied."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    beta = np.asarray(beta, dtype=float).reshape(-1)
    if beta.size != X.shape[1]:
        raise ValidationError(f"beta has length {beta.size}, expected {X.shape[1]}")
    return means_from_eta(model, X @ beta)[0]


def adaptive_simpson(f, a, b, tol=1e-10, max_depth=60, max_evals=2_000_000):
    """Integrate ``f`` over ``[a, b]`` by adaptive Simpson with bisection."""
    if a == b:
        return 0.0
    sign = 1.0
    if a > b:
        a, b, sign = b, a, -1.0
    fa, fm, fb = f(a), f(0.5 * (a + b)), f(b)
    whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    total = 0.0
    evals = 3
    stack = [(a, b, fa, fm, fb, whole, tol, 0)]
    while stack:
        a0, b0, fa0, fm0, fb0, est, eps, depth = stack.pop()
        m0 = 0.5 * (a0 + b0)
        lm, rm = 0.5 * (a0 + m0), 0.5 * (m0 + b0)
        flm, frm = f(lm), f(rm)
        evals += 2
        left = (m0 - a0) / 6.0 * (fa0 + 4.0 * flm + fm0)
        right = (b0 - m0) / 6.0 * (fm0 + 4.0 * frm + fb0)
        delta = left + right - est
        if not math.isfinite(delta):
            raise QuadratureError(f"non-finite integrand on [{a0}, {b0}]")
        if abs(delta) <= 15.0 * eps:
            total += left + right + delta / 15.0
            continue
        if depth >= max_depth or evals > max_evals:
            raise QuadratureError(f"no convergence on [{a0}, {b0}] after depth {depth}")
        stack.append((m0, b0, fm0, frm, fb0, right, 0.5 * eps, depth + 1))
        stack.append((a0, m0, fa0, flm, fm0, left, 0.5 * eps, depth + 1))
    return sign * total


def quasi_loglik_quadrature(variance, y, mu, psi=1.0):
    """Quasi-log-likelihood of one observation by direct integration from ``a``."""
    if not psi > 0:
        raise ValidationError("psi must be positive")
    a = variance.baseline
    lo, hi = variance.domain
    if not (lo < mu < hi):
        raise DomainError(f"mean {mu!r} outside ({lo}, {hi})")

    def integrand(t):
        return (y - t) / float(variance(t))

    return adaptive_simpson(integrand, a, float(mu)) / psi


def loglik_terms(model, y, mu):
    """Unit-dispersion contributions per observation (closed form or quadrature)."""
    variance = model.variance
    if variance.has_closed_form:
        return variance.loglik_terms(y, mu)
    y_b, mu_b = np.broadcast_arrays(np.asarray(y, dtype=float), np.asarray(mu, dtype=float))
    out = np.empty(mu_b.shape)
    for idx in np.ndindex(mu_b.shape):
        out[idx] = quasi_loglik_quadrature(variance, y_b[idx], mu_b[idx])
    return out


def quasi_loglik(model, data, beta, psi=1.0):
    """Log-quasi-likelihood summed over observations, divided by ``psi``."""
    if not psi > 0:
        raise ValidationError("psi must be positive")
    mu = mean_vector(model, data.X, beta)
    terms = loglik_terms(model, data.y, mu)
    bad = np.flatnonzero(~np.isfinite(terms))
    if bad.size:
        i = int(bad[0])
        raise EvaluationError(f"non-finite quasi-likelihood at observation {i}", index=i)
    return float(np.sum(terms)) / psi


def working_quantities(model, data, beta):
    """Return ``(mu, V(mu), g'(mu))`` at ``beta``."""
    mu = mean_vector(model, data.X, beta)
    return mu, model.variance(mu), model.link.deriv(mu)


def quasi_score(model, data, beta, psi=1.0):
    """Gradient of :func:`quasi_loglik` with respect to ``beta``."""
    if not psi > 0:
        raise ValidationError("psi must be positive")
    mu, v, gp = working_quantities(model, data, beta)
    u = (data.y - mu) / (v * gp)
    bad = np.flatnonzero(~np.isfinite(u))
    if bad.size:
        i = int(bad[0])
        raise EvaluationError(f"non-finite score at observation {i}", index=i)
    return data.X.T @ u / psi


def information_weights(model, mu):
    """``d_i = 1 / (V(mu_i) g'(mu_i)^2)``."""
    return 1.0 / (model.variance(mu) * model.link.deriv(mu) ** 2)


def expected_information(model, data, beta, psi=1.0):
    """Expected information ``X' D X / psi``.

    Raises
    ------
    SingularInformationError
        If the matrix is not numerically positive definite.
    """
    if not psi > 0:
        raise ValidationError("psi must be positive")
    mu = mean_vector(model, data.X, beta)
    d = information_weights(model, mu)
    info = (data.X.T * d) @ data.X / psi
    info = 0.5 * (info + info.T)
    check_positive_definite(info, "expected information")
    return info


def check_positive_definite(mat, what="matrix"):
    if not np.all(np.isfinite(mat)):
        raise SingularInformationError(f"{what} has non-finite entries")
    try:
        np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        raise SingularInformationError(f"{what} is singular or not positive definite") from None
    w = np.linalg.eigvalsh(mat)
    if w[0] <= w[-1] * 1e-13:
        raise SingularInformationError(f"{what} is numerically singular (cond > 1e13)")
