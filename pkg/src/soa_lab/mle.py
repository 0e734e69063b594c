"""Classical estimation on full or sampled choice sets.

The fixed-coefficient estimator maximizes the corrected quasi
log-likelihood

    sum_n ln[ exp(V_in + c_in) / sum_{j in D_n} exp(V_jn + c_jn) ]

with an analytic gradient.  The mixing estimator maximizes a simulated
log-likelihood over theta = (mu, vech of the Cholesky factor of Sigma,
log-diagonal), with fixed Halton draws and an optional per-observation
expansion factor W that re-weights each draw by how well the sampled set
covers that draw's full-set probabilities relative to the mixture average.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .draws import halton_normal_draws
from .errors import InvalidInputError, NumericalDegeneracyError
from .model_core import (Dataset, Observation, SampledSet, UtilityParams,
                         log_softmax, utilities)
from .optimize import (hessian_from_f, hessian_from_grad, maximize,
                       std_errors_from_hessian)
from .protocols import correction_vector

WN_MODES = ("naive_one", "exact_full_set")


@dataclass
class FitResult:
    """Outcome of one maximization.

    ``estimate`` is UtilityParams for the fixed-coefficient model and the
    packed (mu, vech L with log-diagonal) vector for the mixing model, in
    which case ``mu``/``sigma``/``chol`` carry the decoded values.
    """

    estimate: object
    std_errors: np.ndarray
    loglik: float
    converged: bool
    iterations: int
    mu: np.ndarray | None = None
    sigma: np.ndarray | None = None
    chol: np.ndarray | None = None
    notes: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# padded array views
# ---------------------------------------------------------------------------

class _ChoiceArrays:
    """Padded tensors for vectorized likelihood work.

    Rows are observations; within a row, columns are the members of that
    observation's evaluation set (full set, or sampled subset).  Ragged
    importance sets are padded; padding columns get utility -inf so they
    carry zero probability.
    """

    def __init__(self, dataset: Dataset, sampled: list[SampledSet] | None,
                 mode: str):
        X = dataset.attribute_tensor()
        chosen = dataset.chosen_ids()
        n = X.shape[0]
        if sampled is None:
            self.X_mem = X
            self.chosen_pos = chosen
            self.c_shift = np.zeros((n, X.shape[1]))
            self.pad = np.zeros((n, X.shape[1]), dtype=bool)
        else:
            if len(sampled) != n:
                raise InvalidInputError(
                    f"{len(sampled)} sampled sets for {n} observations")
            m_max = max(s.size for s in sampled)
            self.X_mem = np.zeros((n, m_max, dataset.K))
            self.c_shift = np.zeros((n, m_max))
            self.pad = np.ones((n, m_max), dtype=bool)
            self.chosen_pos = np.empty(n, dtype=int)
            for i, s in enumerate(sampled):
                if np.any(s.member_ids < 0) or np.any(s.member_ids >= dataset.J):
                    raise InvalidInputError(
                        f"sampled set {i} has member ids outside 0..{dataset.J - 1}")
                c = correction_vector(s, mode)
                m = s.size
                self.X_mem[i, :m] = X[i, s.member_ids]
                # Re-centring the corrections never changes a probability and
                # makes shared-constant corrections vanish exactly.
                self.c_shift[i, :m] = c - np.max(c)
                self.pad[i, :m] = False
                self.chosen_pos[i] = s.position_of(int(chosen[i]))
        self.any_pad = bool(self.pad.any())
        self.n = n

    def log_probs(self, beta_rows: np.ndarray) -> np.ndarray:
        """Log member probabilities; beta_rows is (n, K) or (R, n, K)."""
        V = np.einsum("nmk,...nk->...nm", self.X_mem, beta_rows) + self.c_shift
        if self.any_pad:
            V = np.where(self.pad, -np.inf, V)
        return log_softmax(V, axis=-1)

    def chosen_log_probs(self, beta_rows: np.ndarray) -> np.ndarray:
        lp = self.log_probs(beta_rows)
        return np.take_along_axis(
            lp, np.broadcast_to(self.chosen_pos, lp.shape[:-1])[..., None],
            axis=-1)[..., 0]


def _beta_rows(dataset: Dataset, beta: UtilityParams) -> np.ndarray:
    if beta.beta.shape != (dataset.K,):
        raise InvalidInputError("beta length must equal dataset K")
    return np.broadcast_to(beta.beta, (dataset.n_obs, dataset.K))


# ---------------------------------------------------------------------------
# fixed-coefficient quasi likelihood
# ---------------------------------------------------------------------------

def quasi_loglik(dataset: Dataset, sampled: list[SampledSet] | None,
                 corrections: str, beta: UtilityParams) -> float:
    """Corrected log-likelihood over each observation's evaluation set."""
    view = _ChoiceArrays(dataset, sampled, corrections)
    return float(np.sum(view.chosen_log_probs(_beta_rows(dataset, beta))))


def quasi_loglik_grad(dataset: Dataset, sampled: list[SampledSet] | None,
                      corrections: str, beta: UtilityParams) -> np.ndarray:
    """Analytic gradient: sum_n [ x_chosen - sum_j P_j x_j ]."""
    view = _ChoiceArrays(dataset, sampled, corrections)
    P = np.exp(view.log_probs(_beta_rows(dataset, beta)))
    x_chosen = view.X_mem[np.arange(view.n), view.chosen_pos]
    expected_x = np.einsum("nm,nmk->nk", P, view.X_mem)
    return np.sum(x_chosen - expected_x, axis=0)


def fit_mnl(dataset: Dataset, sampled: list[SampledSet] | None = None,
            corrections: str = "mcfadden", init: UtilityParams | None = None,
            tol: float = 1e-6, max_iter: int = 200) -> FitResult:
    """Maximize the quasi log-likelihood; concave, so converged == global.

    Non-convergence is reported through the result, not raised.
    """
    view = _ChoiceArrays(dataset, sampled, corrections)
    x0 = np.zeros(dataset.K) if init is None else init.beta.copy()
    shape = (dataset.n_obs, dataset.K)

    def f(b):
        return float(np.sum(view.chosen_log_probs(np.broadcast_to(b, shape))))

    def g(b):
        P = np.exp(view.log_probs(np.broadcast_to(b, shape)))
        x_chosen = view.X_mem[np.arange(view.n), view.chosen_pos]
        return np.sum(x_chosen - np.einsum("nm,nmk->nk", P, view.X_mem), axis=0)

    res = maximize(f, g, x0, tol=tol, max_iter=max_iter)
    se = std_errors_from_hessian(hessian_from_grad(g, res.x))
    return FitResult(UtilityParams(res.x), se, res.f, res.converged,
                     res.iterations)


# ---------------------------------------------------------------------------
# mixing-model packing helpers
# ---------------------------------------------------------------------------

def pack_theta(mu: np.ndarray, L: np.ndarray) -> np.ndarray:
    """(mu, lower Cholesky) -> flat vector; diagonal entries stored as logs."""
    K = mu.shape[0]
    rows, cols = np.tril_indices(K)
    vech = L[rows, cols].copy()
    diag = rows == cols
    if np.any(L[np.diag_indices(K)] <= 0.0):
        raise InvalidInputError("Cholesky diagonal must be positive")
    vech[diag] = np.log(vech[diag])
    return np.concatenate([mu, vech])


def unpack_theta(theta: np.ndarray, K: int) -> tuple[np.ndarray, np.ndarray]:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (K + K * (K + 1) // 2,):
        raise InvalidInputError("theta has wrong length for K")
    mu = theta[:K].copy()
    rows, cols = np.tril_indices(K)
    vech = theta[K:].copy()
    diag = rows == cols
    vech[diag] = np.exp(vech[diag])
    L = np.zeros((K, K))
    L[rows, cols] = vech
    return mu, L


def theta_labels(K: int) -> list[str]:
    rows, cols = np.tril_indices(K)
    labels = [f"mu_{i + 1}" for i in range(K)]
    labels += [f"logL_{r + 1}_{c + 1}" if r == c else f"L_{r + 1}_{c + 1}"
               for r, c in zip(rows, cols)]
    return labels


# ---------------------------------------------------------------------------
# expansion factor
# ---------------------------------------------------------------------------

def compute_wn(beta_draw: UtilityParams, theta: tuple[np.ndarray, np.ndarray],
               observation: Observation, sampled_set: SampledSet,
               z_draws: np.ndarray) -> float:
    """Expansion factor for one observation and one mixing draw.

    Numerator: members' full-set probabilities at ``beta_draw``, weighted by
    the members' conditional set probabilities.  Denominator: the same
    weighting applied to full-set probabilities averaged over the draw set
    beta_r = mu + L z_r implied by ``theta`` (the same draws the simulated
    likelihood uses, so the ratio is internally consistent).
    """
    mu, sigma = theta
    mu = np.asarray(mu, dtype=float)
    L = np.linalg.cholesky(np.asarray(sigma, dtype=float))
    z = np.asarray(z_draws, dtype=float)
    if z.ndim != 2 or z.shape[1] != mu.shape[0]:
        raise InvalidInputError("z_draws must be (R, K)")

    X = observation.attribute_matrix()
    pi = np.exp(sampled_set.log_cond_prob)
    members = sampled_set.member_ids

    p_draw = np.exp(log_softmax(X @ beta_draw.beta))
    betas = mu + z @ L.T
    p_mix = np.exp(log_softmax(X @ betas.T, axis=0)).mean(axis=1)

    num = float(pi @ p_draw[members])
    den = float(pi @ p_mix[members])
    if den <= 0.0 or not np.isfinite(den):
        raise NumericalDegeneracyError("expansion-factor denominator collapsed")
    return num / den


# ---------------------------------------------------------------------------
# maximum simulated likelihood
# ---------------------------------------------------------------------------

class _PanelIndex:
    """Observation ordering and grouping by individual."""

    def __init__(self, dataset: Dataset):
        ind = dataset.individual_ids()
        order = np.argsort(ind, kind="stable")
        self.order = order
        sorted_ind = ind[order]
        first = np.ones(sorted_ind.size, dtype=bool)
        first[1:] = sorted_ind[1:] != sorted_ind[:-1]
        self.group_starts = np.nonzero(first)[0]
        self.n_individuals = self.group_starts.size
        # Individual index (0..n_ind-1) per sorted observation row.
        self.obs_to_ind = np.cumsum(first) - 1


def fit_mmnl_msl(dataset: Dataset, sampled: list[SampledSet] | None,
                 corrections: str, wn_mode: str, r_draws: int,
                 init: np.ndarray | None = None, tol: float = 1e-3,
                 max_iter: int = 200) -> FitResult:
    """Maximum simulated likelihood for the normal-mixing panel logit.

    Per individual: ln[(1/R) sum_r prod_t W_nt(beta_r) P(i_nt | beta_r, set_nt)],
    with beta_r = mu + L z_r.  The Halton draw block is generated once and
    reused for every objective evaluation; with ``wn_mode='naive_one'`` the
    expansion factor is identically one.  ``sampled=None`` fits on full sets
    (the expansion factor is then exactly one and is skipped).
    """
    if wn_mode not in WN_MODES:
        raise InvalidInputError(f"unknown Wn mode {wn_mode!r}")
    K = dataset.K
    idx = _PanelIndex(dataset)
    order = idx.order

    # Re-ordered views so reduceat can aggregate contiguous individuals.
    X = dataset.attribute_tensor()[order]
    chosen = dataset.chosen_ids()[order]
    sub = Dataset.from_arrays(X, chosen, dataset.individual_ids()[order])
    sorted_sets = None if sampled is None else [sampled[i] for i in order]
    view = _ChoiceArrays(sub, sorted_sets, corrections)

    use_wn = wn_mode == "exact_full_set" and sampled is not None
    if use_wn:
        log_pi = np.full((sub.n_obs, max(s.size for s in sorted_sets)), -np.inf)
        member_idx = np.zeros_like(log_pi, dtype=int)
        for i, s in enumerate(sorted_sets):
            log_pi[i, :s.size] = s.log_cond_prob
            member_idx[i, :s.size] = s.member_ids

    z = halton_normal_draws(idx.n_individuals, r_draws, K)  # (N, R, K)
    z_obs = z[idx.obs_to_ind]                               # (n_obs, R, K)
    log_r = np.log(r_draws)

    def sim_loglik(theta: np.ndarray) -> float:
        mu, L = unpack_theta(theta, K)
        if not np.all(np.isfinite(L)):
            return -np.inf
        beta = mu + np.einsum("nrk,jk->nrj", z_obs, L)      # (n_obs, R, K)
        lp = view.chosen_log_probs(np.swapaxes(beta, 0, 1)) # (R, n_obs)
        if use_wn:
            v_full = np.einsum("njk,rnk->rnj", X, np.swapaxes(beta, 0, 1))
            lp_full = log_softmax(v_full, axis=-1)          # (R, n_obs, J)
            lp_mem = np.take_along_axis(
                lp_full, np.broadcast_to(member_idx, lp_full.shape[:1] + member_idx.shape),
                axis=-1)
            weighted = log_pi[None] + lp_mem
            m = np.max(weighted, axis=-1, keepdims=True)
            log_num = (m + np.log(np.sum(np.exp(weighted - m), axis=-1,
                                         keepdims=True)))[..., 0]
            p_mix = np.exp(lp_full).mean(axis=0)            # (n_obs, J)
            den = np.sum(np.exp(log_pi) * np.where(
                np.isfinite(log_pi),
                np.take_along_axis(p_mix, member_idx, axis=-1), 0.0), axis=-1)
            if np.any(den <= 0.0):
                return -np.inf
            lp = lp + log_num - np.log(den)[None]
        per_ind = np.add.reduceat(lp, idx.group_starts, axis=1)  # (R, N)
        m = np.max(per_ind, axis=0)
        if not np.all(np.isfinite(m)):
            return -np.inf
        lse = m + np.log(np.sum(np.exp(per_ind - m), axis=0))
        return float(np.sum(lse - log_r))

    def fd_grad(theta: np.ndarray) -> np.ndarray:
        g = np.empty_like(theta)
        for i in range(theta.size):
            h = 1e-5 * max(1.0, abs(theta[i]))
            tp = theta.copy(); tp[i] += h
            tm = theta.copy(); tm[i] -= h
            g[i] = (sim_loglik(tp) - sim_loglik(tm)) / (2.0 * h)
        return g

    if init is None:
        init = pack_theta(np.zeros(K), np.exp(-1.0) * np.eye(K))
    res = maximize(sim_loglik, fd_grad, init, tol=tol, max_iter=max_iter)
    se = std_errors_from_hessian(hessian_from_f(sim_loglik, res.x))
    mu, L = unpack_theta(res.x, K)
    return FitResult(res.x, se, res.f, res.converged, res.iterations,
                     mu=mu, sigma=L @ L.T, chol=L,
                     notes={"wn_mode": wn_mode,
                            "wn_denominator": "draw_averaged",
                            "r_draws": r_draws})
