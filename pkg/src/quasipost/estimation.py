"""Maximum quasi-likelihood fitting and dispersion estimation."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .errors import (
    DegreesOfFreedomError,
    DivergenceError,
    DomainError,
    EvaluationError,
    PerfectFitWarning,
    SingularInformationError,
    UnderdispersionWarning,
    ValidationError,
)
from .model import (
    check_positive_definite,
    expected_information,
    means_from_eta,
    quasi_loglik,
    quasi_score,
    validate,
    working_quantities,
)


@dataclass
class ScoringConfig:
    """Settings for Fisher scoring.

    ``init`` is ``"zeros"``, ``"link_of_mean"`` or an explicit start vector.
    """

    max_iter: int = 100
    score_tol: float = 1e-8
    step_halvings: int = 30
    init: Union[str, np.ndarray] = "link_of_mean"

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValidationError("max_iter must be >= 1")
        if not self.score_tol > 0:
            raise ValidationError("score_tol must be positive")


@dataclass
class FitResult:
    beta_hat: np.ndarray
    psi_hat: float
    information: np.ndarray
    iterations: int
    converged: bool
    score_norm: float
    clamp_events: int = 0
    perfect_fit: bool = False
    loglik: float = field(default=math.nan)

    @property
    def covariance(self):
        """Inverse of the information at ``psi_hat``."""
        return np.linalg.inv(self.information)


def _initial_beta(model, data, init):
    p = data.p
    if isinstance(init, str):
        if init == "zeros":
            return np.zeros(p)
        if init != "link_of_mean":
            raise ValidationError(f"unknown init {init!r}")
        y = data.y
        # shrink toward the overall mean so zeros/ones stay inside the domain
        mu0 = 0.5 * (y + y.mean())
        lo, hi = model.variance.domain
        lo_l, hi_l = model.link.mean_range
        lo, hi = max(lo, lo_l), min(hi, hi_l)
        if math.isfinite(lo) and math.isfinite(hi):
            span = hi - lo
            mu0 = np.clip(mu0, lo + 1e-3 * span, hi - 1e-3 * span)
        elif math.isfinite(lo):
            mu0 = np.maximum(mu0, lo + 1e-3 * max(1.0, abs(mu0.mean())))
        eta0 = model.link(mu0)
        beta0, *_ = np.linalg.lstsq(data.X, eta0, rcond=None)
        return beta0
    beta0 = np.asarray(init, dtype=float).reshape(-1)
    if beta0.size != p:
        raise ValidationError(f"init has length {beta0.size}, expected {p}")
    return beta0.copy()


def _safe_loglik(model, data, beta):
    try:
        value = quasi_loglik(model, data, beta, 1.0)
    except (DomainError, EvaluationError):
        return -math.inf
    return value


def fit_mql(model, data, config=None):
    """Maximum quasi-likelihood estimate by Fisher scoring with step halving.

    The root of the quasi-score does not depend on the dispersion, so the
    iteration runs at unit dispersion and ``psi_hat`` is filled in afterwards
    with :func:`estimate_dispersion_mom`.

    Raises
    ------
    DivergenceError
        No point with ``||score||_inf < score_tol`` after ``max_iter`` steps.
    SingularInformationError
        The information matrix is singular at some iterate.
    """
    config = config or ScoringConfig()
    validate(model, data)
    if np.linalg.matrix_rank(data.X) < data.p:
        raise SingularInformationError("design matrix is not of full column rank")

    beta = _initial_beta(model, data, config.init)
    ll = _safe_loglik(model, data, beta)
    if not math.isfinite(ll):
        if isinstance(config.init, str) and config.init != "zeros":
            beta = np.zeros(data.p)
            ll = _safe_loglik(model, data, beta)
        if not math.isfinite(ll):
            raise DomainError("starting value gives a non-finite quasi-likelihood")

    score = quasi_score(model, data, beta, 1.0)
    score_norm = float(np.max(np.abs(score)))
    iterations = 0
    while score_norm >= config.score_tol:
        if iterations >= config.max_iter:
            raise DivergenceError(
                f"Fisher scoring did not converge in {config.max_iter} iterations "
                f"(||score||_inf = {score_norm:.3g})",
                last_iterate=beta,
                score_norm=score_norm,
            )
        iterations += 1
        info = expected_information(model, data, beta, 1.0)
        step = np.linalg.solve(info, score)
        slack = 1e-12 * max(1.0, abs(ll))
        for _ in range(config.step_halvings + 1):
            candidate = beta + step
            ll_new = _safe_loglik(model, data, candidate)
            if ll_new >= ll - slack:
                break
            step = 0.5 * step
        else:
            raise DivergenceError(
                "step halving failed to find an ascent direction "
                f"(||score||_inf = {score_norm:.3g})",
                last_iterate=beta,
                score_norm=score_norm,
            )
        beta, ll = candidate, ll_new
        score = quasi_score(model, data, beta, 1.0)
        score_norm = float(np.max(np.abs(score)))

    _, clamps = means_from_eta(model, data.X @ beta)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", PerfectFitWarning)
        psi_hat = estimate_dispersion_mom(model, data, beta)
    perfect = any(issubclass(w.category, PerfectFitWarning) for w in caught)
    info = expected_information(model, data, beta, psi_hat if psi_hat > 0 else 1.0)
    return FitResult(
        beta_hat=beta,
        psi_hat=psi_hat,
        information=info,
        iterations=iterations,
        converged=True,
        score_norm=score_norm,
        clamp_events=clamps,
        perfect_fit=perfect,
        loglik=ll,
    )


def estimate_dispersion_mom(model, data, beta_hat):
    """Pearson/method-of-moments dispersion ``sum r_i^2 / V(mu_i) / (n - p)``.

    Returns 0 and emits :class:`PerfectFitWarning` if every residual is zero.
    """
    n, p = data.n, data.p
    if n <= p:
        raise DegreesOfFreedomError(f"need n > p for the dispersion estimate (n={n}, p={p})")
    mu, v, _ = working_quantities(model, data, beta_hat)
    resid = data.y - mu
    if not np.any(resid):
        warnings.warn("all residuals are zero; dispersion estimate is 0", PerfectFitWarning)
        return 0.0
    return float(np.sum(resid**2 / v) / (n - p))


def loss_derivatives(model, data, beta):
    """Per-observation gradients and Hessians of the unit-dispersion loss.

    The loss is the negative quasi-log-likelihood contribution at ``psi = 1``.
    Returns ``grads`` of shape (n, p) and the scalar Hessian factors ``c``
    such that the i-th Hessian is ``c_i x_i x_i'``.
    """
    mu, v, gp = working_quantities(model, data, beta)
    resid = data.y - mu
    w = 1.0 / (v * gp)
    # w'(mu) = -(V' g' + V g'') / (V g')^2
    dw = -(model.variance.deriv(mu) * gp + v * model.link.deriv2(mu)) * w**2
    grads = -(resid * w)[:, None] * data.X
    hess_factor = (w - resid * dw) / gp
    return grads, hess_factor


def estimate_dispersion_llb(model, data, beta_hat):
    """Information-matching loss-scale ``tr(j) / tr(j h^{-1} j)``.

    ``j`` averages the per-observation loss Hessians and ``h`` the uncentred
    outer products of the per-observation loss gradients, both at ``beta_hat``.
    """
    grads, c = loss_derivatives(model, data, beta_hat)
    n = data.n
    X = data.X
    j = (X.T * c) @ X / n
    h = grads.T @ grads / n
    check_positive_definite(h, "gradient outer-product matrix h_n")
    jhj = j @ np.linalg.solve(h, j)
    return float(np.trace(j) / np.trace(jhj))


def coarsening_alpha(psi, n):
    """Coarsening level ``alpha = n / (psi - 1)`` matching dispersion ``psi``.

    ``psi == 1`` maps to ``math.inf`` (the standard posterior).  For
    ``psi < 1`` the negative value is returned with an
    :class:`UnderdispersionWarning`.
    """
    if not psi > 0:
        raise DomainError("psi must be positive")
    if psi == 1:
        return math.inf
    if psi < 1:
        warnings.warn(
            f"psi = {psi} < 1 (underdispersion): no coarsened posterior corresponds",
            UnderdispersionWarning,
        )
    return n / (psi - 1.0)


def psi_from_alpha(alpha, n):
    """Inverse of :func:`coarsening_alpha`: ``psi = (alpha + n) / alpha``."""
    if math.isinf(alpha):
        return 1.0
    if alpha == 0:
        raise DomainError("alpha must be non-zero")
    return (alpha + n) / alpha
