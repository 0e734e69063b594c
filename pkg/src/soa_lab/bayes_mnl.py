"""Bayesian inference for the fixed-coefficient logit.

Two complementary tools: exact grid posteriors (dimension 1 or 2) used as
oracles for marginal likelihoods and KL divergences between the full-set
and sampled-set posteriors, and a random-walk Metropolis sampler for
ordinary posterior simulation.  Both consume the same log posterior kernel,
so the sampled-set variants inherit the correction-mode semantics of the
quasi likelihood.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import (InsufficientDrawsError, InvalidInputError,
                     UnsupportedDimensionError)
from .grids import GridSpec, log_trapezoid
from .mle import _ChoiceArrays
from .model_core import Dataset, SampledSet, UtilityParams

_DOUBLING_TOL = 1e-6
_ADAPT_TARGET = 0.3
_ADAPT_WINDOW = 50


@dataclass
class Prior:
    """Multivariate normal prior over the utility coefficients."""

    mean: np.ndarray
    covariance: np.ndarray
    kind: str = "normal"

    def __post_init__(self):
        if self.kind != "normal":
            raise InvalidInputError("only normal priors are supported")
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        self.covariance = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        k = self.mean.shape[0]
        if self.covariance.shape != (k, k):
            raise InvalidInputError("prior covariance must be K x K")
        try:
            self._chol = np.linalg.cholesky(self.covariance)
        except np.linalg.LinAlgError as exc:
            raise InvalidInputError("prior covariance must be PD") from exc
        self._log_norm = -0.5 * k * math.log(2.0 * math.pi) \
            - float(np.sum(np.log(np.diag(self._chol))))

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def log_density(self, beta: np.ndarray) -> np.ndarray | float:
        """Log density at one point (K,) or a batch (P, K)."""
        b = np.asarray(beta, dtype=float)
        squeeze = b.ndim == 1
        dev = np.atleast_2d(b) - self.mean
        z = np.linalg.solve(self._chol, dev.T)
        quad = np.sum(z * z, axis=0)
        out = self._log_norm - 0.5 * quad
        return float(out[0]) if squeeze else out


@dataclass
class GridPosterior:
    """Posterior evaluated on a lattice, with quadrature metadata.

    ``log_marginal`` is the log of the trapezoid integral of the
    unnormalized kernel; ``density`` is the kernel normalized by it, so the
    same quadrature rule integrates ``density`` to one.  ``converged``
    records the grid-doubling check on the log marginal.
    """

    spec: GridSpec
    points: np.ndarray
    weights: np.ndarray
    log_kernel: np.ndarray
    log_marginal: float
    density: np.ndarray
    converged: bool
    log_marginal_refined: float | None = None

    def same_grid_as(self, other: "GridPosterior") -> bool:
        return self.spec == other.spec


@dataclass
class PosteriorDraws:
    """MCMC output: post-burn-in draws only, plus bookkeeping.

    ``draws`` has shape (n_chains, n_kept, dim).  For the hierarchical
    sampler the optional fields carry per-individual acceptance rates and
    (if requested) stored individual-coefficient draws.
    """

    draws: np.ndarray
    n_chains: int
    burn_in: int
    acceptance_rates: np.ndarray
    seed: int
    param_names: list[str] | None = None
    individual_acceptance: np.ndarray | None = None
    beta_n_draws: np.ndarray | None = None
    individual_ids: np.ndarray | None = None
    degeneracy_events: int = 0

    @property
    def dim(self) -> int:
        return self.draws.shape[-1]

    def pooled(self) -> np.ndarray:
        """(n_chains * n_kept, dim) stacked draws."""
        return self.draws.reshape(-1, self.draws.shape[-1])


@dataclass
class PosteriorSummary:
    mean: np.ndarray
    sd: np.ndarray
    q025: np.ndarray
    q50: np.ndarray
    q975: np.ndarray
    ess: np.ndarray
    n_draws: int
    acceptance_rates: np.ndarray
    param_names: list[str] | None = None


# ---------------------------------------------------------------------------
# kernels and grid posteriors
# ---------------------------------------------------------------------------

def _normalize_sets(sets) -> tuple[list[SampledSet] | None, str]:
    """Accept None (full sets) or a (sampled_sets, mode) pair."""
    if sets is None:
        return None, "none"
    if isinstance(sets, tuple) and len(sets) == 2:
        return sets[0], sets[1]
    raise InvalidInputError("sets must be None or (sampled_sets, mode)")


def log_posterior_kernel(beta: UtilityParams, dataset: Dataset, sets,
                         prior: Prior) -> float:
    """Log prior plus (quasi) log-likelihood at one parameter point."""
    sampled, mode = _normalize_sets(sets)
    view = _ChoiceArrays(dataset, sampled, mode)
    rows = np.broadcast_to(beta.beta, (dataset.n_obs, dataset.K))
    ll = float(np.sum(view.chosen_log_probs(rows)))
    return float(prior.log_density(beta.beta)) + ll


def _batched_loglik(view: _ChoiceArrays, dataset: Dataset,
                    points: np.ndarray) -> np.ndarray:
    """Log-likelihood at each grid point; (P,) for points (P, K)."""
    P = points.shape[0]
    rows = np.broadcast_to(points[:, None, :], (P, dataset.n_obs, dataset.K))
    return np.sum(view.chosen_log_probs(rows), axis=-1)


def grid_posterior(dataset: Dataset, sets, prior: Prior, grid: GridSpec,
                   check_doubling: bool = True) -> GridPosterior:
    """Exact lattice posterior with trapezoid marginal likelihood."""
    if dataset.K > 2:
        raise UnsupportedDimensionError(
            f"grid posteriors support K <= 2, got K={dataset.K}")
    if grid.dim != dataset.K:
        raise InvalidInputError("grid dimension must equal dataset K")
    if prior.dim != dataset.K:
        raise InvalidInputError("prior dimension must equal dataset K")
    sampled, mode = _normalize_sets(sets)
    view = _ChoiceArrays(dataset, sampled, mode)

    def kernel_on(points: np.ndarray) -> np.ndarray:
        return prior.log_density(points) + _batched_loglik(view, dataset, points)

    points = grid.lattice()
    weights = grid.weights()
    log_kernel = kernel_on(points)
    log_marginal = log_trapezoid(log_kernel, weights)
    density = np.exp(log_kernel - log_marginal)

    converged = True
    log_marginal_refined = None
    if check_doubling:
        fine = grid.refined()
        log_marginal_refined = log_trapezoid(kernel_on(fine.lattice()),
                                             fine.weights())
        converged = bool(abs(log_marginal_refined - log_marginal) < _DOUBLING_TOL)

    return GridPosterior(grid, points, weights, log_kernel, log_marginal,
                         density, converged, log_marginal_refined)


def kl_divergence_grid(p_true: GridPosterior, p_sampled: GridPosterior) -> float:
    """Quadrature of p_true * ln(p_true / p_sampled) on the shared grid."""
    if not p_true.same_grid_as(p_sampled):
        raise InvalidInputError("posteriors live on different grids")
    log_p = p_true.log_kernel - p_true.log_marginal
    log_q = p_sampled.log_kernel - p_sampled.log_marginal
    integrand = np.where(p_true.density > 0.0,
                         p_true.density * (log_p - log_q), 0.0)
    return float(np.sum(p_true.weights * integrand))


def kl_decomposition(p_true: GridPosterior,
                     p_sampled: GridPosterior) -> tuple[float, float]:
    """KL split into expected log-likelihood ratio and inverse Bayes factor.

    Returns (E_true[ln L_true - ln L_sampled], ln m_sampled - ln m_true);
    the two terms sum to the KL divergence.  The prior cancels from the
    first term because both kernels share it.
    """
    if not p_true.same_grid_as(p_sampled):
        raise InvalidInputError("posteriors live on different grids")
    expected_llr = float(np.sum(
        p_true.weights * p_true.density *
        (p_true.log_kernel - p_sampled.log_kernel)))
    log_inv_bayes = float(p_sampled.log_marginal - p_true.log_marginal)
    return expected_llr, log_inv_bayes


# ---------------------------------------------------------------------------
# random-walk Metropolis
# ---------------------------------------------------------------------------

def _run_chain(kernel: Callable[[np.ndarray], float], init: np.ndarray,
               n_iter: int, burn_in: int, scale0: float,
               rng: np.random.Generator) -> tuple[np.ndarray, float]:
    dim = init.size
    x = init.copy()
    fx = float(kernel(x))
    if not np.isfinite(fx):
        raise InvalidInputError("kernel not finite at the chain start")
    scale = scale0
    kept = np.empty((n_iter - burn_in, dim))
    accepted_window = 0
    accepted_kept = 0
    for t in range(n_iter):
        prop = x + scale * rng.standard_normal(dim)
        fp = float(kernel(prop))
        if np.log(rng.random()) < fp - fx:
            x, fx = prop, fp
            accepted_window += 1
            if t >= burn_in:
                accepted_kept += 1
        if t < burn_in:
            # Multiplicative nudge toward the target rate; frozen afterwards.
            if (t + 1) % _ADAPT_WINDOW == 0:
                rate = accepted_window / _ADAPT_WINDOW
                scale *= math.exp(0.5 * (rate - _ADAPT_TARGET))
                accepted_window = 0
        else:
            kept[t - burn_in] = x
    rate = accepted_kept / max(1, n_iter - burn_in)
    return kept, rate


def rw_metropolis(kernel: Callable[[np.ndarray], float], init: np.ndarray,
                  n_chains: int, n_iter: int, burn_in: int,
                  proposal_scale: float, seed: int,
                  threads: int = 1) -> PosteriorDraws:
    """Gaussian random-walk Metropolis with burn-in-only scale adaptation.

    Chains use independent streams split from ``seed``, so results do not
    depend on whether they run serially or on a thread pool.
    """
    if proposal_scale <= 0.0:
        raise InvalidInputError("proposal scale must be positive")
    if not 0 <= burn_in < n_iter:
        raise InvalidInputError("need 0 <= burn_in < n_iter")
    init = np.atleast_1d(np.asarray(init, dtype=float))
    rngs = [np.random.default_rng(s)
            for s in np.random.SeedSequence(seed).spawn(n_chains)]

    def job(rng):
        return _run_chain(kernel, init, n_iter, burn_in, proposal_scale, rng)

    if threads > 1 and n_chains > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(job, rngs))
    else:
        results = [job(rng) for rng in rngs]

    draws = np.stack([r[0] for r in results])
    rates = np.array([r[1] for r in results])
    return PosteriorDraws(draws, n_chains, burn_in, rates, seed)


# ---------------------------------------------------------------------------
# summaries
# ---------------------------------------------------------------------------

def _ess_single_chain(x: np.ndarray) -> float:
    """Effective sample size, truncating at the first negative pair sum."""
    n = x.size
    dev = x - x.mean()
    var = float(dev @ dev) / n
    if var <= 0.0:
        return float(n)
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(dev, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[:n] / n
    rho = acov / acov[0]
    tau = 1.0
    k = 1
    while k + 1 < n:
        pair = rho[k] + rho[k + 1]
        if pair < 0.0:
            break
        tau += 2.0 * pair
        k += 2
    return float(min(n, n / tau))


def posterior_summary(draws: PosteriorDraws) -> PosteriorSummary:
    """Means, SDs, central quantiles, and ESS (summed over chains)."""
    pooled = draws.pooled()
    if pooled.shape[0] < 100:
        raise InsufficientDrawsError(
            f"need at least 100 draws to summarize, got {pooled.shape[0]}")
    q = np.percentile(pooled, [2.5, 50.0, 97.5], axis=0)
    ess = np.array([
        sum(_ess_single_chain(draws.draws[c, :, k])
            for c in range(draws.n_chains))
        for k in range(draws.dim)
    ])
    return PosteriorSummary(
        mean=pooled.mean(axis=0),
        sd=pooled.std(axis=0, ddof=1),
        q025=q[0], q50=q[1], q975=q[2],
        ess=ess,
        n_draws=pooled.shape[0],
        acceptance_rates=draws.acceptance_rates,
        param_names=draws.param_names,
    )
