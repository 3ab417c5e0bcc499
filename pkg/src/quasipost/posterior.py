"""Quasi-posterior densities, random-walk Metropolis sampling and summaries.

The quasi-posterior is ``prior(beta) * exp(loglik_Q(beta; psi))`` with ``psi``
fixed beforehand.  The optional random-intercept extension adds
``eta_ij = x_ij' beta + delta_j`` with ``delta_j ~ N(0, sigma^2)`` and samples
``log sigma``.  Parameters are packed as ``(beta, delta_1..delta_J, log sigma)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import optimize

from .diagnostics import effective_sample_size, mcse_mean, split_rhat
from .errors import (
    DomainError,
    EvaluationError,
    InitializationError,
    SingularInformationError,
    ValidationError,
)
from .estimation import fit_mql
from .model import (
    check_positive_definite,
    expected_information,
    loglik_terms,
    means_from_eta,
    validate,
)

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class Prior:
    """Prior on a block of parameters.

    ``kind`` is ``"flat"`` (improper, log density 0), ``"gaussian"`` with
    per-coordinate ``mean``/``sd``, or ``"half_normal"`` with ``scale``.
    """

    kind: str = "flat"
    mean: Optional[np.ndarray] = field(default=None, compare=False)
    sd: Optional[np.ndarray] = field(default=None, compare=False)
    scale: Optional[float] = None

    def __post_init__(self):
        if self.kind == "gaussian":
            if self.sd is None or np.any(np.asarray(self.sd) <= 0):
                raise ValidationError("gaussian prior needs sd > 0")
        elif self.kind == "half_normal":
            if self.scale is None or not self.scale > 0:
                raise ValidationError("half-normal prior needs scale > 0")
        elif self.kind != "flat":
            raise ValidationError(f"unknown prior kind {self.kind!r}")

    @classmethod
    def flat(cls):
        return cls("flat")

    @classmethod
    def gaussian(cls, mean, sd):
        return cls("gaussian", mean=np.asarray(mean, dtype=float), sd=np.asarray(sd, dtype=float))

    @classmethod
    def half_normal(cls, scale=1.0):
        return cls("half_normal", scale=float(scale))

    def logpdf(self, x):
        """Log density summed over the last axis (vectorised over leading axes)."""
        x = np.asarray(x, dtype=float)
        if self.kind == "flat":
            return np.zeros(x.shape[:-1]) if x.ndim else 0.0
        if self.kind == "gaussian":
            z = (x - self.mean) / self.sd
            const = -0.5 * _LOG_2PI - np.log(self.sd)
            return np.sum(const - 0.5 * z**2, axis=-1)
        s = self.scale
        out = math.log(2.0) - 0.5 * _LOG_2PI - math.log(s) - 0.5 * (x / s) ** 2
        return np.sum(np.where(x >= 0, out, -np.inf), axis=-1)

    def grad(self, x):
        if self.kind == "flat":
            return np.zeros_like(x)
        if self.kind == "gaussian":
            return -(x - self.mean) / self.sd**2
        return -x / self.scale**2

    def precision_diag(self, p):
        if self.kind == "gaussian":
            return np.broadcast_to(1.0 / np.asarray(self.sd) ** 2, (p,)).astype(float)
        return np.zeros(p)


@dataclass(frozen=True)
class HierarchySpec:
    """Random intercepts for ``J`` groups with a prior on their sd ``sigma``."""

    J: int
    prior_sigma: Prior = field(default_factory=lambda: Prior.half_normal(1.0))

    def __post_init__(self):
        if self.J < 1:
            raise ValidationError("J must be >= 1")
        if self.prior_sigma.kind != "half_normal":
            raise ValidationError("sigma prior must be half-normal")


@dataclass(frozen=True)
class PosteriorSpec:
    model: object
    prior_beta: Prior = field(default_factory=Prior.flat)
    psi: float = 1.0
    hierarchical: Optional[HierarchySpec] = None

    def __post_init__(self):
        if not self.psi > 0:
            raise ValidationError("psi must be positive")
        pb = self.prior_beta
        if pb.kind == "half_normal":
            raise ValidationError("beta prior must be flat or gaussian")

    def dimension(self, data):
        if self.hierarchical is None:
            return data.p
        return data.p + self.hierarchical.J + 1

    def param_names(self, data):
        names = [f"beta_{k + 1}" for k in range(data.p)]
        if self.hierarchical is not None:
            names += [f"delta_{j + 1}" for j in range(self.hierarchical.J)]
            names.append("log_sigma")
        return names


def pack(beta, delta=None, log_sigma=None):
    """Concatenate ``(beta, delta, log_sigma)`` into one parameter vector."""
    parts = [np.atleast_1d(np.asarray(beta, dtype=float))]
    if delta is not None:
        parts.append(np.atleast_1d(np.asarray(delta, dtype=float)))
        parts.append(np.atleast_1d(float(log_sigma)))
    return np.concatenate(parts)


def unpack(params, p, J=None):
    """Split a packed vector (or a batch along the last axis)."""
    params = np.asarray(params, dtype=float)
    beta = params[..., :p]
    if not J:
        return beta, None, None
    return beta, params[..., p:p + J], params[..., p + J]


def _check_spec(spec, data):
    validate(spec.model, data)
    h = spec.hierarchical
    if h is not None:
        if data.groups is None:
            raise ValidationError("hierarchical spec needs group labels in the dataset")
        if data.n_groups != h.J:
            raise ValidationError(f"dataset has {data.n_groups} groups, spec says J={h.J}")


def _log_density_batch(spec, data, P):
    """Unnormalised log quasi-posterior for a batch ``P`` of shape (m, d).

    Domain violations and non-finite values map to ``-inf``.
    """
    P = np.atleast_2d(P)
    p = data.p
    h = spec.hierarchical
    beta, delta, log_sigma = unpack(P, p, h.J if h else None)
    eta = data.X @ beta.T
    if h is not None:
        eta = eta + delta[:, data.groups - 1].T
    out = spec.prior_beta.logpdf(beta)
    try:
        mu, _ = means_from_eta(spec.model, eta)
    except DomainError:
        lo, hi = spec.model.variance.domain
        ok = np.all((eta > lo) & (eta < hi), axis=0)
        res = np.full(P.shape[0], -np.inf)
        if np.any(ok):
            res[ok] = _log_density_batch(spec, data, P[ok])
        return res
    with np.errstate(all="ignore"):
        ll = np.sum(loglik_terms(spec.model, data.y[:, None], mu), axis=0) / spec.psi
        out = out + ll
        if h is not None:
            sigma = np.exp(log_sigma)
            J = h.J
            out = out - J * (0.5 * _LOG_2PI + log_sigma) - 0.5 * np.sum(delta**2, axis=1) / sigma**2
            out = out + h.prior_sigma.logpdf(sigma[:, None]) + log_sigma
    return np.where(np.isfinite(out), out, -np.inf)


def log_quasi_posterior(spec, data, params):
    """Log prior plus log-quasi-likelihood at ``params`` (up to a constant).

    Domain violations raise :class:`DomainError`; non-finite values raise
    :class:`EvaluationError`.
    """
    _check_spec(spec, data)
    params = np.asarray(params, dtype=float).reshape(-1)
    d = spec.dimension(data)
    if params.size != d:
        raise ValidationError(f"params has length {params.size}, expected {d}")
    p = data.p
    h = spec.hierarchical
    beta, delta, log_sigma = unpack(params, p, h.J if h else None)
    eta = data.X @ beta
    if h is not None:
        eta = eta + delta[data.groups - 1]
    mu, _ = means_from_eta(spec.model, eta)
    terms = loglik_terms(spec.model, data.y, mu)
    bad = np.flatnonzero(~np.isfinite(terms))
    if bad.size:
        raise EvaluationError(f"non-finite quasi-likelihood at observation {bad[0]}", index=int(bad[0]))
    value = float(spec.prior_beta.logpdf(beta)) + float(np.sum(terms)) / spec.psi
    if h is not None:
        sigma = math.exp(log_sigma)
        value += -h.J * (0.5 * _LOG_2PI + log_sigma) - 0.5 * float(delta @ delta) / sigma**2
        value += float(h.prior_sigma.logpdf(np.array([sigma]))) + log_sigma
    if not math.isfinite(value):
        raise EvaluationError("non-finite log quasi-posterior")
    return value


def log_quasi_posterior_grad(spec, data, params):
    """Gradient of :func:`log_quasi_posterior` with respect to the packed vector."""
    params = np.asarray(params, dtype=float).reshape(-1)
    p = data.p
    h = spec.hierarchical
    beta, delta, log_sigma = unpack(params, p, h.J if h else None)
    eta = data.X @ beta
    if h is not None:
        eta = eta + delta[data.groups - 1]
    mu, _ = means_from_eta(spec.model, eta)
    model = spec.model
    u = (data.y - mu) / (model.variance(mu) * model.link.deriv(mu)) / spec.psi
    grad_beta = data.X.T @ u + spec.prior_beta.grad(beta)
    if h is None:
        return grad_beta
    sigma = math.exp(log_sigma)
    grad_delta = np.bincount(data.groups - 1, weights=u, minlength=h.J) - delta / sigma**2
    s = h.prior_sigma.scale
    grad_ls = -h.J + float(delta @ delta) / sigma**2 - sigma**2 / s**2 + 1.0
    return np.concatenate([grad_beta, grad_delta, [grad_ls]])


def find_mode(spec, data, start=None):
    """Posterior mode and the inverse negative Hessian there.

    Non-hierarchical specs with a flat prior reuse the Fisher-scoring fit and
    the expected information.  Otherwise the mode is found with BFGS and the
    Hessian by central differences of the analytic gradient.
    """
    _check_spec(spec, data)
    h = spec.hierarchical
    p = data.p
    fit = fit_mql(spec.model, data)
    if h is None:
        info = expected_information(spec.model, data, fit.beta_hat, spec.psi)
        info = info + np.diag(spec.prior_beta.precision_diag(p))
        if spec.prior_beta.kind == "flat":
            return fit.beta_hat.copy(), np.linalg.inv(info)
        x0 = fit.beta_hat if start is None else start
    else:
        x0 = pack(fit.beta_hat, np.zeros(h.J), math.log(0.5)) if start is None else start

    def neg(x):
        try:
            return -log_quasi_posterior(spec, data, x)
        except (DomainError, EvaluationError):
            return math.inf

    def neg_grad(x):
        try:
            return -log_quasi_posterior_grad(spec, data, x)
        except (DomainError, EvaluationError):
            return np.zeros_like(x)

    res = optimize.minimize(neg, np.asarray(x0, dtype=float), jac=neg_grad, method="BFGS",
                            options={"gtol": 1e-8, "maxiter": 5000})
    mode = res.x
    d = mode.size
    hess = np.empty((d, d))
    for k in range(d):
        step = 1e-5 * max(1.0, abs(mode[k]))
        e = np.zeros(d)
        e[k] = step
        hess[:, k] = (neg_grad(mode + e) - neg_grad(mode - e)) / (2.0 * step)
    hess = 0.5 * (hess + hess.T)
    try:
        check_positive_definite(hess, "negative Hessian at the mode")
        cov = np.linalg.inv(hess)
    except SingularInformationError:
        cov = np.diag(1.0 / np.maximum(np.abs(np.diag(hess)), 1e-8))
    return mode, cov


@dataclass
class SamplerConfig:
    """Sampler settings; ``draws`` is the chain length including ``warmup``."""

    chains: int = 3
    draws: int = 1500
    warmup: int = 500
    seed: int = 0
    target_accept: float = 0.234

    def __post_init__(self):
        if self.chains < 1:
            raise ValidationError("chains must be >= 1")
        if self.draws < 1:
            raise ValidationError("draws must be >= 1")
        if self.warmup < 0:
            raise ValidationError("warmup must be >= 0")
        if self.draws <= self.warmup:
            raise ValidationError("draws must exceed warmup")

    @property
    def retained(self):
        return self.draws - self.warmup


@dataclass
class ChainSet:
    """Post-warmup draws of shape (chains, draws, params) with diagnostics."""

    draws: np.ndarray
    warmup: int
    acceptance_rate: np.ndarray
    seed: int
    param_names: list = None
    step_scale: Optional[np.ndarray] = None
    rhat: np.ndarray = field(init=False)
    ess: np.ndarray = field(init=False)
    mcse: np.ndarray = field(init=False)

    def __post_init__(self):
        self.draws = np.asarray(self.draws, dtype=float)
        if self.draws.ndim != 3:
            raise ValidationError("draws must be (chains, draws, params)")
        if self.param_names is None:
            self.param_names = [f"param_{k + 1}" for k in range(self.draws.shape[2])]
        self.rhat = split_rhat(self.draws)
        self.ess = effective_sample_size(self.draws)
        self.mcse = mcse_mean(self.draws, self.ess)

    @property
    def n_chains(self):
        return self.draws.shape[0]

    @property
    def n_draws(self):
        return self.draws.shape[1]

    @property
    def flat(self):
        return self.draws.reshape(-1, self.draws.shape[2])

    def mean(self):
        return self.flat.mean(axis=0)

    def sd(self):
        flat = self.flat
        if flat.shape[0] < 2:
            return np.zeros(flat.shape[1])
        return flat.std(axis=0, ddof=1)


def sample_rwmh(spec, data, config=None, *, center=None, covariance=None):
    """Adaptive random-walk Metropolis on the quasi-posterior.

    The Gaussian proposal uses the shape of ``covariance`` (by default the
    inverse information at the mode, see :func:`find_mode`) times a per-chain
    scale starting at ``2.38 / sqrt(d)``.  During warmup the log scale follows
    a Robbins-Monro recursion toward ``config.target_accept``; it is frozen
    afterwards.  Chains draw from independent streams spawned from
    ``config.seed``, so identical seeds give identical output.
    """
    config = config or SamplerConfig()
    _check_spec(spec, data)
    if center is None or covariance is None:
        mode, cov = find_mode(spec, data)
        center = mode if center is None else center
        covariance = cov if covariance is None else covariance
    center = np.asarray(center, dtype=float).reshape(-1)
    d = spec.dimension(data)
    if center.size != d:
        raise ValidationError(f"center has length {center.size}, expected {d}")
    chol = np.linalg.cholesky(0.5 * (covariance + covariance.T))

    C, T, warmup = config.chains, config.draws, config.warmup
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(config.seed).spawn(C)]

    current = np.empty((C, d))
    for c, rng in enumerate(streams):
        for _ in range(100):
            x0 = center + chol @ rng.standard_normal(d)
            if np.isfinite(_log_density_batch(spec, data, x0[None, :])[0]):
                current[c] = x0
                break
        else:
            raise InitializationError(f"chain {c}: no finite starting point after 100 jitters")

    noise = np.stack([rng.standard_normal((T, d)) for rng in streams])
    log_u = np.stack([np.log(rng.random(T)) for rng in streams])

    log_scale = np.full(C, math.log(2.38 / math.sqrt(d)))
    lp = _log_density_batch(spec, data, current)
    out = np.empty((C, config.retained, d))
    accepted = np.zeros(C)
    target = config.target_accept
    for t in range(T):
        step = noise[:, t, :] @ chol.T
        proposal = current + np.exp(log_scale)[:, None] * step
        lp_prop = _log_density_batch(spec, data, proposal)
        with np.errstate(invalid="ignore"):
            log_ratio = lp_prop - lp
        log_ratio = np.where(np.isnan(log_ratio), -np.inf, log_ratio)
        accept = log_u[:, t] < log_ratio
        current = np.where(accept[:, None], proposal, current)
        lp = np.where(accept, lp_prop, lp)
        if t < warmup:
            alpha = np.exp(np.minimum(log_ratio, 0.0))
            log_scale = log_scale + (t + 1.0) ** -0.6 * (alpha - target)
        else:
            out[:, t - warmup] = current
            accepted += accept
    return ChainSet(
        draws=out,
        warmup=warmup,
        acceptance_rate=accepted / config.retained,
        seed=config.seed,
        param_names=spec.param_names(data),
        step_scale=np.exp(log_scale),
    )


@dataclass
class LaplaceResult:
    mean: np.ndarray
    covariance: np.ndarray

    @property
    def sd(self):
        return np.sqrt(np.diag(self.covariance))


def laplace_approx(spec, data, fit):
    """Gaussian approximation ``N(beta_hat, I(beta_hat)^{-1})`` at ``psi = spec.psi``."""
    if not fit.converged:
        raise ValidationError("Laplace approximation needs a converged fit")
    info = expected_information(spec.model, data, fit.beta_hat, spec.psi)
    return LaplaceResult(mean=np.array(fit.beta_hat, dtype=float), covariance=np.linalg.inv(info))


@dataclass
class CredibleSet:
    level: float
    kind: str
    lower: np.ndarray
    upper: np.ndarray

    @property
    def width(self):
        return self.upper - self.lower

    def contains(self, value):
        value = np.asarray(value, dtype=float)
        return (self.lower <= value) & (value <= self.upper)


def _hpd_1d(sorted_x, level):
    S = sorted_x.size
    k = int(math.ceil(level * S))
    k = min(max(k, 1), S)
    widths = sorted_x[k - 1:] - sorted_x[:S - k + 1]
    i = int(np.argmin(widths))
    return sorted_x[i], sorted_x[i + k - 1]


def credible_sets(chains, level, kind="equal_tailed"):
    """Per-parameter credible intervals of mass ``level``.

    ``equal_tailed`` takes the empirical ``(1 - level)/2`` and ``(1 + level)/2``
    quantiles; ``hpd`` the shortest window containing ``ceil(level * S)``
    sorted draws.  ``chains`` is a :class:`ChainSet` or an array of draws
    (flattened to ``(S, d)``).
    """
    if not 0 < level < 1:
        raise DomainError("level must lie in (0, 1)")
    if isinstance(chains, ChainSet):
        flat = chains.flat
    else:
        flat = np.asarray(chains, dtype=float)
        flat = flat.reshape(-1, 1) if flat.ndim == 1 else flat.reshape(-1, flat.shape[-1])
    if flat.shape[0] < 100:
        raise ValidationError("credible sets need at least 100 draws")
    if kind == "equal_tailed":
        lower = np.quantile(flat, 0.5 * (1.0 - level), axis=0)
        upper = np.quantile(flat, 0.5 * (1.0 + level), axis=0)
    elif kind == "hpd":
        bounds = [_hpd_1d(np.sort(flat[:, k]), level) for k in range(flat.shape[1])]
        lower = np.array([b[0] for b in bounds])
        upper = np.array([b[1] for b in bounds])
    else:
        raise ValidationError(f"unknown credible set kind {kind!r}")
    return CredibleSet(level=level, kind=kind, lower=lower, upper=upper)


def diagnostics(chains):
    """``{"rhat", "ess", "mcse"}`` for a :class:`ChainSet`."""
    return {"rhat": chains.rhat.copy(), "ess": chains.ess.copy(), "mcse": chains.mcse.copy()}
