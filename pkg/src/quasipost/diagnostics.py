"""Split R-hat, effective sample size and Monte Carlo standard error."""

import numpy as np


def _as_3d(draws):
    draws = np.asarray(draws, dtype=float)
    if draws.ndim == 2:
        draws = draws[:, :, None]
    if draws.ndim != 3:
        raise ValueError("draws must have shape (chains, draws[, params])")
    return draws


def _split(draws):
    n_half = draws.shape[1] // 2
    if n_half < 2:
        return None
    first = draws[:, :n_half]
    second = draws[:, -n_half:]
    return np.concatenate([first, second], axis=0)


def split_rhat(draws):
    """Split potential scale reduction factor per parameter.

    Each chain is cut in half and the classical between/within variance ratio
    is computed over the ``2C`` half-chains.  Zero within-chain variance gives
    ``inf``; fewer than four draws per chain gives ``nan``.
    """
    draws = _as_3d(draws)
    halves = _split(draws)
    d = draws.shape[2]
    if halves is None:
        return np.full(d, np.nan)
    m, n = halves.shape[:2]
    chain_means = halves.mean(axis=1)
    within = halves.var(axis=1, ddof=1).mean(axis=0)
    between = n * chain_means.var(axis=0, ddof=1)
    var_plus = (n - 1) / n * within + between / n
    with np.errstate(divide="ignore", invalid="ignore"):
        rhat = np.sqrt(var_plus / within)
    return np.where(within > 0, rhat, np.inf)


def _autocovariance(x):
    """Biased autocovariance of each row of ``x`` via FFT."""
    n = x.shape[-1]
    centered = x - x.mean(axis=-1, keepdims=True)
    size = 2 ** int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(centered, n=size, axis=-1)
    acov = np.fft.irfft(f * np.conj(f), n=size, axis=-1)[..., :n]
    return acov / n


def effective_sample_size(draws):
    """Autocorrelation-based ESS with Geyer's initial monotone sequence.

    Multi-chain autocorrelations are combined as in BDA3 (11.7).  A chain
    with zero variance yields ESS 0.
    """
    draws = _as_3d(draws)
    C, S, d = draws.shape
    out = np.zeros(d)
    if S < 4:
        return np.full(d, np.nan)
    for k in range(d):
        x = draws[:, :, k]
        acov = _autocovariance(x)
        chain_var = acov[:, 0] * S / (S - 1.0)
        within = chain_var.mean()
        var_plus = within * (S - 1.0) / S
        if C > 1:
            var_plus += x.mean(axis=1).var(ddof=1)
        if not var_plus > 0:
            out[k] = 0.0
            continue
        rho = 1.0 - (within - acov.mean(axis=0)) / var_plus
        rho[0] = 1.0
        # Geyer: sum consecutive pairs while positive, enforce monotone decrease
        tau = -1.0
        prev_pair = np.inf
        t = 0
        while t + 1 < S:
            pair = rho[t] + rho[t + 1]
            if pair < 0:
                break
            pair = min(pair, prev_pair)
            tau += 2.0 * pair
            prev_pair = pair
            t += 2
        tau = max(tau, 1.0 / np.log10(C * S))
        out[k] = C * S / tau
    return out


def mcse_mean(draws, ess=None):
    """Monte Carlo standard error of the posterior mean, ``sd / sqrt(ess)``."""
    draws = _as_3d(draws)
    flat = draws.reshape(-1, draws.shape[2])
    ess = effective_sample_size(draws) if ess is None else np.asarray(ess)
    sd = flat.std(axis=0, ddof=1) if flat.shape[0] > 1 else np.zeros(flat.shape[1])
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(ess > 0, sd / np.sqrt(ess), np.inf)
