"""Gibbs sampler for the Bayesian mixed multinomial logit.

The hierarchical model mixes individual-level coefficients beta_n over a
normal population distribution N(mu, Sigma).  Augmenting the parameter
space with the beta_n themselves makes the sampler a three-step cycle:

1. mu     | Sigma, beta_all   -- conjugate normal draw
2. Sigma  | mu, beta_all      -- conjugate inverted-Wishart draw
3. beta_n | mu, Sigma, Y_n    -- one random-walk MH step per individual

Steps 1 and 2 receive only the mixing state and the priors, never the
choice data, so their cost is independent of the choice-set size; the
choice sets (full or sampled-with-correction) enter only through the MH
target of step 3.  Sampled sets are drawn once up front and held fixed
for the whole run.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.linalg import solve_triangular

from .errors import InvalidInputError, NumericalDegeneracyError
from .mle import _ChoiceArrays, _PanelIndex
from .model_core import (CORRECTION_MODES, Dataset, Observation, SampledSet,
                         log_softmax, utilities)
from .bayes_mnl import PosteriorDraws
from .protocols import correction_vector

# Multiplicative step-3 adaptation: every ADAPT_WINDOW burn-in iterations,
# each individual's proposal scale is nudged toward TARGET_ACCEPT.
ADAPT_WINDOW = 50
TARGET_ACCEPT = 0.3
_RHO_BOUNDS = (1e-3, 1e3)
_MAX_RETRIES = 3


def _symmetric(M: np.ndarray, what: str) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise InvalidInputError(f"{what} must be a square matrix")
    if not np.allclose(M, M.T, rtol=0.0, atol=1e-10):
        raise InvalidInputError(f"{what} must be symmetric")
    return 0.5 * (M + M.T)


def _chol_pd(M: np.ndarray, what: str) -> np.ndarray:
    """Cholesky factor, or a numerical-degeneracy error naming the matrix."""
    try:
        return np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        raise NumericalDegeneracyError(f"{what} is not positive definite")


@dataclass
class MixingState:
    """Current (mu, Sigma, beta_all) of the augmented parameter space."""

    mu: np.ndarray
    sigma: np.ndarray
    beta_all: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        if self.mu.ndim != 1:
            raise InvalidInputError("mu must be a 1-d vector")
        K = self.mu.shape[0]
        self.sigma = _symmetric(self.sigma, "sigma")
        if self.sigma.shape != (K, K):
            raise InvalidInputError("sigma shape must match mu length")
        _chol_pd(self.sigma, "sigma")
        self.beta_all = np.atleast_2d(np.asarray(self.beta_all, dtype=float))
        if self.beta_all.shape[1] != K or self.beta_all.shape[0] < 1:
            raise InvalidInputError("beta_all must be (N, K) with N >= 1")
        if not (np.all(np.isfinite(self.mu)) and np.all(np.isfinite(self.sigma))
                and np.all(np.isfinite(self.beta_all))):
            raise InvalidInputError("mixing state must be finite")

    @property
    def n_individuals(self) -> int:
        return self.beta_all.shape[0]


@dataclass
class MmnlPriors:
    """Normal prior on mu, inverted-Wishart prior on Sigma."""

    m0: np.ndarray
    A0: np.ndarray
    v0: float
    S0: np.ndarray

    def __post_init__(self):
        self.m0 = np.asarray(self.m0, dtype=float)
        if self.m0.ndim != 1:
            raise InvalidInputError("m0 must be a 1-d vector")
        K = self.m0.shape[0]
        self.A0 = _symmetric(self.A0, "A0")
        self.S0 = _symmetric(self.S0, "S0")
        if self.A0.shape != (K, K) or self.S0.shape != (K, K):
            raise InvalidInputError("A0 and S0 must be K x K")
        _chol_pd(self.A0, "A0")
        _chol_pd(self.S0, "S0")
        self.v0 = float(self.v0)
        if not self.v0 > K - 1:
            raise InvalidInputError("v0 must exceed K - 1")

    @classmethod
    def default_for(cls, K: int) -> "MmnlPriors":
        """Weakly informative defaults: m0=0, A0=100 I, v0=K+2, S0=I."""
        return cls(np.zeros(K), 100.0 * np.eye(K), K + 2, np.eye(K))

    @property
    def dim(self) -> int:
        return self.m0.shape[0]


@dataclass
class GibbsConfig:
    """Run-length, seeding, proposal scale, and choice-set handling.

    ``sets`` is None for full choice sets, or a (sampled_sets, mode) pair
    with one SampledSet per observation in dataset order.
    """

    iterations: int
    burn_in: int
    thin: int = 1
    seed: int = 0
    rho: float = 0.4
    sets: tuple[list[SampledSet], str] | None = None
    store_beta_n: bool = False

    def __post_init__(self):
        if not (self.iterations > self.burn_in >= 0):
            raise InvalidInputError("need iterations > burn_in >= 0")
        if self.thin < 1:
            raise InvalidInputError("thin must be >= 1")
        if not self.rho >= 0.0:
            raise InvalidInputError("proposal scale rho must be >= 0")
        if self.sets is not None:
            sampled, mode = self.sets
            if mode not in CORRECTION_MODES:
                raise InvalidInputError(f"unknown correction mode {mode!r}")
            if not sampled:
                raise InvalidInputError("sets tuple carries no sampled sets")


# ---------------------------------------------------------------------------
# conjugate steps
# ---------------------------------------------------------------------------

def gibbs_step_mu(state: MixingState, priors: MmnlPriors,
                  rng: np.random.Generator) -> np.ndarray:
    """Draw mu from its normal full conditional.

    Posterior covariance (A0^-1 + N Sigma^-1)^-1, mean = that covariance
    times (A0^-1 m0 + Sigma^-1 sum_n beta_n).
    """
    N = state.n_individuals
    L_sig = _chol_pd(state.sigma, "sigma")
    eye = np.eye(priors.dim)
    sig_inv = solve_triangular(L_sig.T, solve_triangular(L_sig, eye, lower=True),
                               lower=False)
    L_a0 = np.linalg.cholesky(priors.A0)
    a0_inv = solve_triangular(L_a0.T, solve_triangular(L_a0, eye, lower=True),
                              lower=False)
    precision = a0_inv + N * sig_inv
    cov = np.linalg.inv(precision)
    cov = 0.5 * (cov + cov.T)
    mean = cov @ (a0_inv @ priors.m0 + sig_inv @ state.beta_all.sum(axis=0))
    return mean + _chol_pd(cov, "mu-step covariance") @ rng.standard_normal(priors.dim)


def sigma_posterior_params(state: MixingState,
                           priors: MmnlPriors) -> tuple[float, np.ndarray]:
    """(degrees of freedom, scale) of Sigma's inverted-Wishart conditional."""
    dev = state.beta_all - state.mu
    return priors.v0 + state.n_individuals, priors.S0 + dev.T @ dev


def gibbs_step_sigma(state: MixingState, priors: MmnlPriors,
                     rng: np.random.Generator) -> np.ndarray:
    """Draw Sigma from inverted Wishart(v0 + N, S0 + sum_n dev dev')."""
    dof, scale = sigma_posterior_params(state, priors)
    _chol_pd(scale, "inverted-Wishart scale")
    draw = stats.invwishart.rvs(df=dof, scale=scale, random_state=rng)
    draw = np.asarray(draw, dtype=float).reshape(priors.dim, priors.dim)
    return 0.5 * (draw + draw.T)


# ---------------------------------------------------------------------------
# Metropolis-Hastings step for the individual coefficients
# ---------------------------------------------------------------------------

def individual_chosen_loglik(observations: list[Observation],
                             sets: list[SampledSet] | None,
                             correction_mode: str, beta: np.ndarray) -> float:
    """Log P(Y_n | beta, sets): sum of chosen log probabilities over the
    individual's observations, on full sets (sets=None) or corrected
    sampled subsets.  Zero observations give 0.0 (the MH target then
    reduces to the population density)."""
    beta = np.asarray(beta, dtype=float)
    total = 0.0
    for t, obs in enumerate(observations):
        V = obs.attribute_matrix() @ beta
        if sets is None:
            total += float(log_softmax(V)[obs.chosen])
        else:
            s = sets[t]
            c = correction_vector(s, correction_mode)
            v = V[s.member_ids] + (c - np.max(c))
            total += float(log_softmax(v)[s.position_of(obs.chosen)])
    return total


def _mvn_logpdf_rows(B: np.ndarray, mu: np.ndarray, L: np.ndarray) -> np.ndarray:
    """Rows of B under N(mu, L L'); returns (N,) log densities."""
    dev = np.atleast_2d(B) - mu
    z = solve_triangular(L, dev.T, lower=True)
    K = mu.shape[0]
    return (-0.5 * np.sum(z * z, axis=0)
            - np.sum(np.log(np.diag(L)))
            - 0.5 * K * np.log(2.0 * np.pi))


def gibbs_step_beta_n(state: MixingState, n: int,
                      observations: list[Observation],
                      sets: list[SampledSet] | None,
                      rng: np.random.Generator, rho: float = 0.4,
                      correction_mode: str = "mcfadden") -> tuple[np.ndarray, bool]:
    """One random-walk MH step for individual n's coefficients.

    Proposal beta' = beta + rho L z with L the Cholesky factor of the
    current Sigma; the target is P(Y_n | beta, sets) f(beta | mu, Sigma).
    Returns the (possibly unchanged) coefficient vector and the acceptance
    flag.  With rho = 0 the proposal equals the current point and is always
    accepted.
    """
    L = _chol_pd(state.sigma, "sigma")
    beta = state.beta_all[n].copy()
    z = rng.standard_normal(state.mu.shape[0])
    log_u = np.log(rng.random())
    prop = beta + rho * (L @ z)
    ll_cur = individual_chosen_loglik(observations, sets, correction_mode, beta)
    ll_prop = individual_chosen_loglik(observations, sets, correction_mode, prop)
    lp_cur = float(_mvn_logpdf_rows(beta, state.mu, L)[0])
    lp_prop = float(_mvn_logpdf_rows(prop, state.mu, L)[0])
    if log_u < (ll_prop + lp_prop) - (ll_cur + lp_cur):
        return prop, True
    return beta, False


# ---------------------------------------------------------------------------
# the full sampler
# ---------------------------------------------------------------------------

def _vech(M: np.ndarray) -> np.ndarray:
    i, j = np.tril_indices(M.shape[0])
    return M[i, j]


def _vech_names(K: int) -> list[str]:
    i, j = np.tril_indices(K)
    return [f"sigma_{a}_{b}" for a, b in zip(i, j)]


def _iteration_rng(seed: int, phase: int, iteration: int) -> np.random.Generator:
    # Counter-based: the stream for an iteration depends only on (seed,
    # phase, iteration), never on how earlier work was scheduled.
    ss = np.random.SeedSequence(seed, spawn_key=(0, phase, iteration))
    return np.random.default_rng(ss)


def run_gibbs(dataset: Dataset, priors: MmnlPriors,
              config: GibbsConfig) -> PosteriorDraws:
    """Cycle the three Gibbs steps and collect post-burn-in draws.

    Step 3 updates every individual each iteration with a vectorized MH
    sweep (the conditional targets are independent given mu and Sigma);
    per-individual proposal scales start at config.rho and adapt toward
    30% acceptance during burn-in only.  Draw storage is mu followed by
    vech(Sigma); individual coefficients are stored only on request.
    """
    K = dataset.K
    if priors.dim != K:
        raise InvalidInputError("prior dimension must match dataset K")

    idx = _PanelIndex(dataset)
    X = dataset.attribute_tensor()[idx.order]
    chosen = dataset.chosen_ids()[idx.order]
    individuals = dataset.individual_ids()[idx.order]
    sorted_ds = Dataset.from_arrays(X, chosen, individuals)

    if config.sets is None:
        sampled_sorted, mode = None, "none"
    else:
        sampled, mode = config.sets
        if len(sampled) != dataset.n_obs:
            raise InvalidInputError(
                f"{len(sampled)} sampled sets for {dataset.n_obs} observations")
        sampled_sorted = [sampled[i] for i in idx.order]
    view = _ChoiceArrays(sorted_ds, sampled_sorted, mode)

    N = idx.n_individuals
    state = MixingState(priors.m0.copy(), priors.S0.copy(),
                        np.tile(priors.m0, (N, 1)))
    rho = np.full(N, config.rho)

    def panel_loglik(beta_rows_by_ind: np.ndarray) -> np.ndarray:
        lp = view.chosen_log_probs(beta_rows_by_ind[idx.obs_to_ind])
        return np.add.reduceat(lp, idx.group_starts)

    ll_cur = panel_loglik(state.beta_all)

    n_keep = (config.iterations - config.burn_in + config.thin - 1) // config.thin
    draws = np.empty((n_keep, K + K * (K + 1) // 2))
    beta_stored = (np.empty((n_keep, N, K)) if config.store_beta_n else None)
    win_acc = np.zeros(N)
    win_len = 0
    post_acc = np.zeros(N)
    n_post = 0
    degeneracy_events = 0
    kept = 0

    for it in range(config.iterations):
        rng_conj = _iteration_rng(config.seed, 1, it)
        rng_beta = _iteration_rng(config.seed, 2, it)

        for attempt in range(_MAX_RETRIES + 1):
            try:
                state.mu = gibbs_step_mu(state, priors, rng_conj)
                state.sigma = gibbs_step_sigma(state, priors, rng_conj)
                break
            except NumericalDegeneracyError:
                degeneracy_events += 1
                if attempt == _MAX_RETRIES:
                    raise
                state.sigma = state.sigma + 1e-8 * np.eye(K)
                state.beta_all = state.beta_all + 1e-8 * rng_conj.standard_normal(
                    state.beta_all.shape)
                ll_cur = panel_loglik(state.beta_all)

        L = _chol_pd(state.sigma, "sigma")
        z = rng_beta.standard_normal((N, K))
        log_u = np.log(rng_beta.random(N))
        prop = state.beta_all + rho[:, None] * (z @ L.T)
        ll_prop = panel_loglik(prop)
        lp_cur = _mvn_logpdf_rows(state.beta_all, state.mu, L)
        lp_prop = _mvn_logpdf_rows(prop, state.mu, L)
        accept = log_u < (ll_prop + lp_prop) - (ll_cur + lp_cur)
        state.beta_all = np.where(accept[:, None], prop, state.beta_all)
        ll_cur = np.where(accept, ll_prop, ll_cur)

        if it < config.burn_in:
            win_acc += accept
            win_len += 1
            if win_len == ADAPT_WINDOW:
                rho = np.clip(rho * np.exp(0.5 * (win_acc / win_len - TARGET_ACCEPT)),
                              *_RHO_BOUNDS)
                win_acc[:] = 0.0
                win_len = 0
        else:
            post_acc += accept
            n_post += 1
            offset = it - config.burn_in
            if offset % config.thin == 0:
                draws[kept, :K] = state.mu
                draws[kept, K:] = _vech(state.sigma)
                if beta_stored is not None:
                    beta_stored[kept] = state.beta_all
                kept += 1

    individual_rates = post_acc / max(n_post, 1)
    names = [f"mu_{k}" for k in range(K)] + _vech_names(K)
    return PosteriorDraws(
        draws=draws[None, :kept],
        n_chains=1,
        burn_in=config.burn_in,
        acceptance_rates=np.array([float(individual_rates.mean())]),
        seed=config.seed,
        param_names=names,
        individual_acceptance=individual_rates,
        beta_n_draws=None if beta_stored is None else beta_stored[:kept],
        individual_ids=individuals[idx.group_starts],
        degeneracy_events=degeneracy_events,
    )
