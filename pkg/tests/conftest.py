import numpy as np
import pytest

from quasipost import QuasiModel

# (link, variance, param) pairs whose link range lies inside the variance domain
NAMED_PAIRS = [
    ("identity", "constant", None),
    ("identity", "exp_mu", None),
    ("log", "constant", None),
    ("log", "mu", None),
    ("log", "mu_sq", None),
    ("log", "mu_pow", 3.0),
    ("log", "exp_mu", None),
    ("log", "nb", 2.0),
    ("logit", "binom", None),
    ("logit", "binom_sq", None),
    ("logit", "binom_pow", 2.25),
]


def random_problem(link, variance, param, n, rng):
    """A design, a coefficient vector with moderate means and valid responses."""
    model = QuasiModel.from_names(link, variance, param)
    X = np.column_stack([np.ones(n), rng.uniform(-1, 1, size=(n, 2))])
    beta = rng.uniform(-0.5, 0.5, size=3)
    if link == "log":
        beta[0] += 0.5
        y = rng.gamma(2.0, 1.0, size=n)
    elif link == "logit":
        y = rng.uniform(0.0, 1.0, size=n)
    else:
        y = rng.normal(0.0, 1.0, size=n)
    return model, X, beta, y


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# Full-size coverage studies are shared by the invariant and acceptance tests.
STUDY_SEED = 2024
STUDY_REPLICATES = 100


@pytest.fixture(scope="session")
def het_study():
    from quasipost import SamplerConfig, run_coverage_study
    from quasipost.simulate import GeneratorSpec

    spec = GeneratorSpec.het_gaussian(n=300)
    return spec, run_coverage_study(spec, S=STUDY_REPLICATES, sampler_config=SamplerConfig(3, 1500, 500),
                                    seed=STUDY_SEED)


@pytest.fixture(scope="session")
def count_study():
    from quasipost import SamplerConfig, run_coverage_study
    from quasipost.simulate import GeneratorSpec

    spec = GeneratorSpec.rounded_gamma_counts(n=1000)
    return spec, run_coverage_study(spec, S=STUDY_REPLICATES, sampler_config=SamplerConfig(3, 1500, 500),
                                    seed=STUDY_SEED)


# One line per acceptance criterion, repeated in the terminal summary.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
