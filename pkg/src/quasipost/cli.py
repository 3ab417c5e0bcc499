"""Command-line interface: ``quasipost {fit,sample,laplace,dispersion,coverage}``.

Options can also be given in a flat ``key = value`` file passed with
``--config``; command-line flags take precedence over the file.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .errors import (
    DegreesOfFreedomError,
    DivergenceError,
    DomainError,
    EvaluationError,
    InitializationError,
    QuadratureError,
    QuasiError,
    ReplicateFailureError,
    SingularInformationError,
    ValidationError,
)
from .estimation import (
    coarsening_alpha,
    estimate_dispersion_llb,
    estimate_dispersion_mom,
    fit_mql,
)
from .model import QuasiModel, mean_vector
from .posterior import HierarchySpec, PosteriorSpec, Prior, SamplerConfig, laplace_approx, sample_rwmh
from .serialize import (
    load_dataset,
    summarize,
    write_chains_csv,
    write_coverage_csv,
    write_json,
    write_posterior_means_csv,
)
from .simulate import GeneratorSpec, run_coverage_study, smse_pearson

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3

log = logging.getLogger("quasipost")

DEFAULTS = {
    "data": None,
    "response": None,
    "covariates": "",
    "groups": None,
    "link": "identity",
    "variance": "constant",
    "variance_param": None,
    "psi": "mom",
    "prior": "flat",
    "chains": 3,
    "draws": 1500,
    "warmup": 500,
    "seed": 0,
    "out": ".",
    "no_intercept": False,
    "generator": "het_gaussian",
    "replicates": 100,
    "n": None,
    "beta0": None,
    "psi0": None,
    "methods": "quasi_posterior,misspecified_reference",
}

_INT_KEYS = {"chains", "draws", "warmup", "seed", "replicates", "n"}
_BOOL_KEYS = {"no_intercept"}


def read_config(path):
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    for line_no, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{path}, line {line_no}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in DEFAULTS:
            raise ValidationError(f"{path}, line {line_no}: unknown key {key!r}")
        out[key] = value
    return out


def _coerce(key, value):
    if value is None:
        return None
    if key in _INT_KEYS:
        try:
            return int(value)
        except ValueError:
            raise ValidationError(f"{key} must be an integer, got {value!r}") from None
    if key in _BOOL_KEYS:
        if isinstance(value, bool):
            return value
        return str(value).lower() in ("1", "true", "yes", "on")
    return value


def resolve_options(args):
    """Merge defaults, the optional config file and explicit flags."""
    opts = dict(DEFAULTS)
    if args.config:
        opts.update(read_config(args.config))
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None and value is not False:
            opts[key] = value
    return {k: _coerce(k, v) for k, v in opts.items()}


def _split_list(text):
    return [s.strip() for s in str(text).split(",") if s.strip()] if text else []


def _floats(text, what):
    try:
        return [float(s) for s in _split_list(text)]
    except ValueError:
        raise ValidationError(f"{what} must be comma-separated numbers, got {text!r}") from None


def build_model(opts):
    param = opts["variance_param"]
    if param is not None:
        try:
            param = float(param)
        except ValueError:
            raise ValidationError(f"variance-param must be a number, got {param!r}") from None
    return QuasiModel.from_names(opts["link"], opts["variance"], param)


def parse_prior(text, p):
    parts = str(text).split(":")
    if parts[0] == "flat" and len(parts) == 1:
        return Prior.flat()
    if parts[0] == "gaussian" and len(parts) in (2, 3):
        vals = [float(v) for v in parts[1:]]
        mean, sd = (0.0, vals[0]) if len(vals) == 1 else vals
        return Prior.gaussian(np.full(p, mean), np.full(p, sd))
    raise ValidationError(f"prior must be 'flat', 'gaussian:SD' or 'gaussian:MEAN:SD', got {text!r}")


def resolve_psi(text, model, data, beta_hat):
    text = str(text)
    if text == "mom":
        return estimate_dispersion_mom(model, data, beta_hat)
    if text == "llb":
        return estimate_dispersion_llb(model, data, beta_hat)
    if text.startswith("fixed:"):
        try:
            value = float(text[6:])
        except ValueError:
            value = math.nan
        if not value > 0:
            raise ValidationError(f"fixed psi must be a positive number, got {text!r}")
        return value
    raise ValidationError(f"psi must be 'mom', 'llb' or 'fixed:<value>', got {text!r}")


def _load(opts):
    if not opts["data"]:
        raise ValidationError("--data is required")
    if not opts["response"]:
        raise ValidationError("--response is required")
    model = build_model(opts)
    data, names, labels = load_dataset(
        opts["data"], opts["response"], _split_list(opts["covariates"]),
        opts["groups"], intercept=not opts["no_intercept"],
    )
    model.variance.check_response(data.y)
    return model, data, names, labels


def _out_dir(opts):
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _alpha_entry(psi, n):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        alpha = coarsening_alpha(psi, n)
    return {"alpha": alpha, "infinite": math.isinf(alpha), "underdispersed": psi < 1}


def cmd_fit(opts):
    model, data, names, _ = _load(opts)
    fit = fit_mql(model, data)
    psi_llb = estimate_dispersion_llb(model, data, fit.beta_hat)
    result = {
        "coefficients": names,
        "beta_hat": fit.beta_hat,
        "psi_mom": fit.psi_hat,
        "psi_llb": psi_llb,
        "information": fit.information,
        "coarsening": _alpha_entry(fit.psi_hat, data.n) if fit.psi_hat > 0 else None,
        "converged": fit.converged,
        "iterations": fit.iterations,
        "score_norm": fit.score_norm,
        "clamp_events": fit.clamp_events,
        "perfect_fit": fit.perfect_fit,
        "n": data.n,
        "p": data.p,
        "link": model.link.kind,
        "variance": model.variance.kind,
    }
    write_json(_out_dir(opts) / "fit.json", result)
    return result


def cmd_dispersion(opts):
    model, data, _, _ = _load(opts)
    fit = fit_mql(model, data)
    mu = mean_vector(model, data.X, fit.beta_hat)
    result = {
        "psi_mom": fit.psi_hat,
        "psi_llb": estimate_dispersion_llb(model, data, fit.beta_hat),
        "coarsening": _alpha_entry(fit.psi_hat, data.n) if fit.psi_hat > 0 else None,
        "smse_pearson": smse_pearson(model, data, mu, fit.psi_hat) if fit.psi_hat > 0 else None,
        "n": data.n,
        "p": data.p,
    }
    write_json(_out_dir(opts) / "dispersion.json", result)
    return result


def cmd_laplace(opts):
    model, data, names, _ = _load(opts)
    fit = fit_mql(model, data)
    psi = resolve_psi(opts["psi"], model, data, fit.beta_hat)
    approx = laplace_approx(PosteriorSpec(model, psi=psi), data, fit)
    result = {"coefficients": names, "psi": psi, "mean": approx.mean,
              "covariance": approx.covariance, "sd": approx.sd}
    write_json(_out_dir(opts) / "laplace.json", result)
    return result


def cmd_sample(opts):
    model, data, names, labels = _load(opts)
    fit = fit_mql(model, data)
    psi = resolve_psi(opts["psi"], model, data, fit.beta_hat)
    hier = HierarchySpec(J=data.n_groups) if data.groups is not None else None
    spec = PosteriorSpec(model, parse_prior(opts["prior"], data.p), psi, hier)
    config = SamplerConfig(opts["chains"], opts["draws"], opts["warmup"], opts["seed"])
    chains = sample_rwmh(spec, data, config)
    out = _out_dir(opts)
    write_chains_csv(out / "chains.csv", chains)
    summary = summarize(chains)
    summary.update({
        "coefficients": names,
        "groups": labels,
        "psi": psi,
        "seed": config.seed,
        "chains": config.chains,
        "draws": config.draws,
        "warmup": config.warmup,
        "acceptance_rate": chains.acceptance_rate,
    })
    write_json(out / "summary.json", summary)
    return summary


def cmd_coverage(opts):
    kind = opts["generator"]
    if kind == "het_gaussian":
        spec = GeneratorSpec.het_gaussian()
    elif kind == "rounded_gamma_counts":
        spec = GeneratorSpec.rounded_gamma_counts()
    else:
        raise ValidationError(f"generator must be het_gaussian or rounded_gamma_counts, got {kind!r}")
    if opts["n"] is not None:
        spec.n = opts["n"]
    if opts["beta0"]:
        spec.beta0 = np.array(_floats(opts["beta0"], "beta0"))
    if opts["psi0"]:
        spec.psi0 = _floats(opts["psi0"], "psi0")[0]
    spec = GeneratorSpec(spec.kind, spec.beta0, spec.psi0, spec.n)
    if opts["replicates"] < 1:
        raise ValidationError("replicates must be >= 1")
    config = SamplerConfig(opts["chains"], opts["draws"], opts["warmup"], opts["seed"])
    reports = run_coverage_study(spec, _split_list(opts["methods"]), opts["replicates"], config, opts["seed"])
    out = _out_dir(opts)
    write_coverage_csv(out / "coverage.csv", reports)
    write_posterior_means_csv(out / "posterior_means.csv", reports)
    return reports


COMMANDS = {
    "fit": cmd_fit,
    "sample": cmd_sample,
    "laplace": cmd_laplace,
    "dispersion": cmd_dispersion,
    "coverage": cmd_coverage,
}

_NUMERICAL = (DivergenceError, SingularInformationError, EvaluationError, QuadratureError,
              InitializationError, ReplicateFailureError)
_VALIDATION = (ValidationError, DomainError, DegreesOfFreedomError)


def build_parser():
    parser = argparse.ArgumentParser(prog="quasipost", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value configuration file")
    common.add_argument("--data", help="headered CSV file")
    common.add_argument("--response", help="response column")
    common.add_argument("--covariates", help="comma-separated covariate columns")
    common.add_argument("--groups", help="group column for random intercepts (sample only)")
    common.add_argument("--no-intercept", dest="no_intercept", action="store_true", default=None,
                        help="do not prepend an intercept column")
    common.add_argument("--link", choices=["identity", "log", "logit"])
    common.add_argument("--variance", choices=["constant", "mu", "mu_sq", "mu_pow", "exp_mu",
                                               "binom", "binom_sq", "binom_pow", "nb"])
    common.add_argument("--variance-param", dest="variance_param", help="p, q or k of the variance family")
    common.add_argument("--psi", help="mom | llb | fixed:<value>")
    common.add_argument("--prior", help="flat | gaussian:SD | gaussian:MEAN:SD")
    common.add_argument("--chains", type=int)
    common.add_argument("--draws", type=int, help="iterations per chain, warmup included")
    common.add_argument("--warmup", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("fit", "sample", "laplace", "dispersion"):
        sub.add_parser(name, parents=[common])
    cov = sub.add_parser("coverage", parents=[common])
    cov.add_argument("--generator", choices=["het_gaussian", "rounded_gamma_counts"])
    cov.add_argument("--replicates", type=int)
    cov.add_argument("--n", type=int)
    cov.add_argument("--beta0", help="comma-separated true coefficients")
    cov.add_argument("--psi0", help="true dispersion")
    cov.add_argument("--methods", help="comma-separated subset of quasi_posterior,misspecified_reference")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        opts = resolve_options(args)
        COMMANDS[args.command](opts)
    except _NUMERICAL as exc:
        print(f"quasipost: numerical failure: {exc}", file=sys.stderr)
        if isinstance(exc, DivergenceError) and exc.last_iterate is not None:
            print(f"quasipost: last iterate: {np.array2string(exc.last_iterate, precision=17)}", file=sys.stderr)
        return EXIT_NUMERICAL
    except _VALIDATION + (FileNotFoundError,) as exc:
        print(f"quasipost: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except QuasiError as exc:
        print(f"quasipost: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
