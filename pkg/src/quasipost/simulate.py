"""Synthetic data generators and replicated frequentist-coverage studies."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import QuasiError, ReplicateFailureError, ValidationError
from .estimation import fit_mql
from .model import Dataset, QuasiModel, expected_information, mean_vector
from .posterior import PosteriorSpec, SamplerConfig, credible_sets, sample_rwmh

log = logging.getLogger(__name__)

LEVELS = (0.90, 0.95, 0.99)
METHODS = ("quasi_posterior", "misspecified_reference")

HET_BETA0 = (-3.0, 2.0, 1.5, 1.0)
HET_PSI0 = 2.5
COUNT_BETA0 = (3.5, 1.5, -1.0, 0.5)
COUNT_PSI0 = 3.5


@dataclass
class GeneratorSpec:
    """Data-generating design.

    ``kind`` is ``"het_gaussian"`` (identity mean, variance
    ``psi0 * exp(mean)``), ``"rounded_gamma_counts"`` (log mean, rounded
    gamma draws with variance ``psi0 * mean``) or ``"custom"``.  A custom
    design supplies ``model`` and ``sampler(mu, var, rng) -> y``.
    """

    kind: str
    beta0: np.ndarray
    psi0: float
    n: int
    covariate_law: str = "std_normal"
    model: Optional[QuasiModel] = None
    sampler: Optional[Callable] = field(default=None, repr=False)

    def __post_init__(self):
        self.beta0 = np.asarray(self.beta0, dtype=float).reshape(-1)
        if self.kind not in ("het_gaussian", "rounded_gamma_counts", "custom"):
            raise ValidationError(f"unknown generator kind {self.kind!r}")
        if not self.psi0 > 0:
            raise ValidationError("psi0 must be positive")
        if self.n < self.beta0.size:
            raise ValidationError("n must be >= p")
        if self.covariate_law != "std_normal":
            raise ValidationError("only std_normal covariates are supported")
        if self.kind == "custom" and (self.model is None or self.sampler is None):
            raise ValidationError("custom generators need a model and a sampler")

    @property
    def p(self):
        return self.beta0.size

    @property
    def quasi_model(self):
        if self.kind == "het_gaussian":
            return QuasiModel.from_names("identity", "exp_mu")
        if self.kind == "rounded_gamma_counts":
            return QuasiModel.from_names("log", "mu")
        return self.model

    @classmethod
    def het_gaussian(cls, n=300, beta0=HET_BETA0, psi0=HET_PSI0):
        return cls("het_gaussian", np.array(beta0), psi0, n)

    @classmethod
    def rounded_gamma_counts(cls, n=1000, beta0=COUNT_BETA0, psi0=COUNT_PSI0):
        return cls("rounded_gamma_counts", np.array(beta0), psi0, n)


def design_matrix(n, p, rng):
    """Intercept column followed by ``p - 1`` standard-normal covariates."""
    return np.column_stack([np.ones(n), rng.standard_normal((n, p - 1))])


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def generate_het_gaussian(spec, seed, X=None):
    """Gaussian responses with mean ``x'beta0`` and variance ``psi0 exp(x'beta0)``."""
    if spec.kind != "het_gaussian":
        raise ValidationError("spec.kind must be het_gaussian")
    rng = _rng(seed)
    X = design_matrix(spec.n, spec.p, rng) if X is None else np.asarray(X, dtype=float)
    eta = X @ spec.beta0
    y = eta + np.sqrt(spec.psi0 * np.exp(eta)) * rng.standard_normal(eta.size)
    return Dataset(y, X)


def generate_rounded_gamma_counts(spec, seed, X=None):
    """Counts from rounding ``Gamma(shape=mu/psi0, rate=1/psi0)`` draws."""
    if spec.kind != "rounded_gamma_counts":
        raise ValidationError("spec.kind must be rounded_gamma_counts")
    rng = _rng(seed)
    X = design_matrix(spec.n, spec.p, rng) if X is None else np.asarray(X, dtype=float)
    mu = np.exp(X @ spec.beta0)
    y_tilde = rng.gamma(mu / spec.psi0, spec.psi0)
    return Dataset(np.rint(y_tilde), X)


def generate(spec, seed, X=None):
    if spec.kind == "het_gaussian":
        return generate_het_gaussian(spec, seed, X)
    if spec.kind == "rounded_gamma_counts":
        return generate_rounded_gamma_counts(spec, seed, X)
    rng = _rng(seed)
    X = design_matrix(spec.n, spec.p, rng) if X is None else np.asarray(X, dtype=float)
    model = spec.model
    mu = mean_vector(model, X, spec.beta0)
    y = spec.sampler(mu, spec.psi0 * model.variance(mu), rng)
    return Dataset(np.asarray(y, dtype=float), X)


def generate_grouped_counts(beta0, psi0, sigma, J, n_per_group, seed):
    """Overdispersed counts with Gaussian random intercepts.

    ``mu_ij = exp(x_ij' beta0 + delta_j)``, ``delta_j ~ N(0, sigma^2)``, and
    responses are rounded gamma draws with variance ``psi0 * mu_ij``.
    Returns the dataset and the realised intercepts.
    """
    rng = _rng(seed)
    beta0 = np.asarray(beta0, dtype=float)
    n = J * n_per_group
    X = design_matrix(n, beta0.size, rng)
    groups = np.repeat(np.arange(1, J + 1), n_per_group)
    delta = sigma * rng.standard_normal(J)
    mu = np.exp(X @ beta0 + delta[groups - 1])
    y = np.rint(rng.gamma(mu / psi0, psi0))
    return Dataset(y, X, groups), delta


def smse_pearson(model, data, mu_hat, psi_hat):
    """Mean squared Pearson residual ``mean((y - mu)^2 / (psi V(mu)))``."""
    if not psi_hat > 0:
        raise ValidationError("psi_hat must be positive")
    mu_hat = np.asarray(mu_hat, dtype=float)
    return float(np.mean((data.y - mu_hat) ** 2 / (psi_hat * model.variance(mu_hat))))


@dataclass
class CoverageReport:
    """Empirical coverage of one method over the successful replicates.

    ``coverage[l, k]`` is the fraction of replicates whose level ``levels[l]``
    interval for coefficient ``k`` contains ``beta0[k]``.
    """

    method: str
    levels: tuple
    coverage: np.ndarray
    replicates: int
    failures: int
    posterior_means: np.ndarray
    mean_width: np.ndarray
    psi: np.ndarray

    @property
    def posterior_mean_spread(self):
        return self.posterior_means.std(axis=0, ddof=1) if len(self.posterior_means) > 1 else np.zeros(self.coverage.shape[1])

    def rows(self):
        for l, level in enumerate(self.levels):
            for k in range(self.coverage.shape[1]):
                yield {
                    "method": self.method,
                    "level": level,
                    "coefficient": f"beta_{k + 1}",
                    "coverage": float(self.coverage[l, k]),
                    "replicates": self.replicates,
                    "failures": self.failures,
                }


def _method_setup(spec, method, data):
    """Model and dispersion for one method on one dataset."""
    if method == "quasi_posterior":
        model = spec.quasi_model
        fit = fit_mql(model, data)
        return model, fit, fit.psi_hat
    if method != "misspecified_reference":
        raise ValidationError(f"unknown method {method!r}")
    if spec.kind == "het_gaussian":
        # homoscedastic Gaussian linear model, residual variance plugged in
        model = QuasiModel.from_names("identity", "constant")
        fit = fit_mql(model, data)
        return model, fit, fit.psi_hat
    model = spec.quasi_model
    return model, fit_mql(model, data), 1.0


def _replicate_seeds(seed, r, k):
    ss = np.random.SeedSequence(seed, spawn_key=(r,))
    children = ss.spawn(k + 1)
    return children[0], [int(c.generate_state(1, np.uint64)[0]) for c in children[1:]]


def run_replicate(spec, methods, sampler_config, seed, r, levels=LEVELS, kind="equal_tailed"):
    """One replicate: returns ``{method: dict or exception}``."""
    data_seed, method_seeds = _replicate_seeds(seed, r, len(methods))
    data = generate(spec, np.random.default_rng(data_seed))
    results = {}
    for method, mseed in zip(methods, method_seeds):
        try:
            model, fit, psi = _method_setup(spec, method, data)
            post = PosteriorSpec(model, psi=psi)
            cov = np.linalg.inv(expected_information(model, data, fit.beta_hat, psi))
            cfg = SamplerConfig(sampler_config.chains, sampler_config.draws,
                                sampler_config.warmup, mseed, sampler_config.target_accept)
            chains = sample_rwmh(post, data, cfg, center=fit.beta_hat, covariance=cov)
            sets = [credible_sets(chains, lv, kind) for lv in levels]
            results[method] = {
                "covered": np.array([cs.contains(spec.beta0) for cs in sets]),
                "width": np.array([cs.width for cs in sets]),
                "mean": chains.mean(),
                "psi": psi,
            }
        except (QuasiError, np.linalg.LinAlgError) as exc:
            log.warning("replicate %d, method %s failed: %s", r, method, exc)
            results[method] = exc
    return results


def run_coverage_study(spec, methods: Sequence[str] = METHODS, S=100, sampler_config=None, seed=0,
                       levels=LEVELS, kind="equal_tailed", max_failure_rate=0.05):
    """Replicated coverage study; one :class:`CoverageReport` per method.

    Replicate ``r`` draws all of its randomness from a stream keyed by
    ``(seed, r)``, so results do not depend on execution order.

    Raises
    ------
    ReplicateFailureError
        More than ``max_failure_rate`` of the replicates failed for a method.
    """
    sampler_config = sampler_config or SamplerConfig()
    methods = tuple(methods)
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise ValidationError(f"unknown method(s) {unknown}; choose from {list(METHODS)}")
    if S < 1:
        raise ValidationError("S must be >= 1")
    per_method = {m: [] for m in methods}
    failures = {m: 0 for m in methods}
    for r in range(S):
        res = run_replicate(spec, methods, sampler_config, seed, r, levels, kind)
        for m in methods:
            if isinstance(res[m], Exception):
                failures[m] += 1
            else:
                per_method[m].append(res[m])
    reports = []
    for m in methods:
        if failures[m] > max_failure_rate * S:
            raise ReplicateFailureError(f"{failures[m]} of {S} replicates failed for {m}")
        ok = per_method[m]
        if ok:
            coverage = np.array([o["covered"] for o in ok]).mean(axis=0)
            mean_width = np.array([o["width"] for o in ok]).mean(axis=0)
        else:
            coverage = np.full((len(levels), spec.p), np.nan)
            mean_width = np.full((len(levels), spec.p), np.nan)
        reports.append(CoverageReport(
            method=m,
            levels=tuple(levels),
            coverage=coverage,
            replicates=S,
            failures=failures[m],
            posterior_means=np.array([o["mean"] for o in ok]).reshape(-1, spec.p),
            mean_width=mean_width,
            psi=np.array([o["psi"] for o in ok]),
        ))
    return reports
