"""Three-step Gibbs sampler for the hierarchical logit.

The two conjugate steps have closed-form conditionals, so they are tested
against Monte-Carlo moments of the known distributions; the MH step is
tested through its invariances (zero proposal scale, prior-only targets,
correction-mode cancellation under uniform conditioning).
"""

import numpy as np
import pytest

from soa_lab import (Dataset, GibbsConfig, InvalidInputError, MixingState,
                     MmnlDgpConfig, MmnlPriors, Protocol, SampledSet,
                     derive_stream, draw_sampled_set, generate_mmnl,
                     gibbs_step_beta_n, gibbs_step_mu, gibbs_step_sigma,
                     individual_chosen_loglik, run_gibbs,
                     sigma_posterior_params)


def fixed_state(seed=0, N=40, K=2):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(K, K))
    sigma = A @ A.T + 0.5 * np.eye(K)
    return MixingState(rng.normal(size=K), sigma, rng.normal(size=(N, K)))


# ---------------------------------------------------------------------------
# conjugate steps
# ---------------------------------------------------------------------------

def test_mu_step_matches_normal_conditional_moments():
    state = fixed_state()
    priors = MmnlPriors(np.array([0.5, -0.5]), 2.0 * np.eye(2), 4,
                        np.eye(2))
    a0_inv = np.linalg.inv(priors.A0)
    sig_inv = np.linalg.inv(state.sigma)
    cov = np.linalg.inv(a0_inv + state.n_individuals * sig_inv)
    mean = cov @ (a0_inv @ priors.m0 + sig_inv @ state.beta_all.sum(axis=0))

    rng = np.random.default_rng(123)
    draws = np.array([gibbs_step_mu(state, priors, rng) for _ in range(4000)])
    se = np.sqrt(np.diag(cov) / draws.shape[0])
    assert np.all(np.abs(draws.mean(axis=0) - mean) < 5 * se)
    assert np.allclose(np.cov(draws.T), cov, atol=0.02, rtol=0.15)


def test_mu_step_diffuse_prior_centers_on_coefficient_average():
    state = fixed_state(seed=1, N=200)
    priors = MmnlPriors(np.array([50.0, -50.0]), 1e8 * np.eye(2), 4, np.eye(2))
    rng = np.random.default_rng(5)
    draws = np.array([gibbs_step_mu(state, priors, rng) for _ in range(2000)])
    bbar = state.beta_all.mean(axis=0)
    # prior mean far away but essentially flat: the draw centers on beta-bar
    assert np.all(np.abs(draws.mean(axis=0) - bbar) < 0.05)


def test_sigma_conditional_parameters():
    state = fixed_state(seed=2, N=7, K=2)
    priors = MmnlPriors(np.zeros(2), np.eye(2), 5, 2.0 * np.eye(2))
    dof, scale = sigma_posterior_params(state, priors)
    dev = state.beta_all - state.mu
    assert dof == 5 + 7
    assert np.allclose(scale, 2.0 * np.eye(2) + dev.T @ dev, atol=1e-12)


def test_sigma_step_matches_inverted_wishart_mean():
    state = fixed_state(seed=3, N=30, K=2)
    priors = MmnlPriors(np.zeros(2), np.eye(2), 6, np.eye(2))
    dof, scale = sigma_posterior_params(state, priors)
    want = scale / (dof - 2 - 1)  # mean exists since dof > K + 1
    rng = np.random.default_rng(7)
    draws = np.stack([gibbs_step_sigma(state, priors, rng)
                      for _ in range(4000)])
    assert np.allclose(draws.mean(axis=0), want, rtol=0.1, atol=0.02)


def test_sigma_step_draws_are_pd_and_symmetric():
    state = fixed_state(seed=4, N=10, K=3)
    priors = MmnlPriors.default_for(3)
    rng = np.random.default_rng(8)
    for _ in range(50):
        S = gibbs_step_sigma(state, priors, rng)
        assert np.array_equal(S, S.T)
        assert np.min(np.linalg.eigvalsh(S)) > 0.0


def test_default_priors():
    p = MmnlPriors.default_for(3)
    assert np.array_equal(p.m0, np.zeros(3))
    assert np.array_equal(p.A0, 100.0 * np.eye(3))
    assert p.v0 == 5
    assert np.array_equal(p.S0, np.eye(3))
    with pytest.raises(InvalidInputError):
        MmnlPriors(np.zeros(2), np.eye(2), 0.5, np.eye(2))  # v0 <= K-1


def test_mixing_state_validation():
    with pytest.raises(InvalidInputError):
        MixingState(np.zeros(2), np.array([[1.0, 0.2], [0.3, 1.0]]),
                    np.zeros((3, 2)))  # asymmetric sigma
    with pytest.raises(Exception):
        MixingState(np.zeros(2), -np.eye(2), np.zeros((3, 2)))  # not PD


# ---------------------------------------------------------------------------
# individual-level MH step
# ---------------------------------------------------------------------------

def panel_data(seed=0, N=30, T=4, J=4, K=1):
    cfg = MmnlDgpConfig(N=N, T=T, J=J, K=K, mu_star=np.full(K, 0.8),
                        sigma_star=0.4 * np.eye(K), seed=seed)
    return generate_mmnl(cfg)


def obs_of(dataset, individual):
    return [o for o in dataset.observations
            if o.individual_id == individual]


def test_empty_panel_loglik_is_zero():
    assert individual_chosen_loglik([], None, "none", np.array([1.0])) == 0.0


def test_loglik_invariant_to_constant_set_probability_shift():
    ds, _ = panel_data()
    obs = obs_of(ds, ds.individual_ids()[0])
    rng = np.random.default_rng(1)
    sets = [draw_sampled_set(Protocol("uniform_wor", m=2), o, rng) for o in obs]
    shifted = [SampledSet(s.member_ids, s.log_cond_prob - 7.0) for s in sets]
    beta = np.array([0.9])
    a = individual_chosen_loglik(obs, sets, "mcfadden", beta)
    b = individual_chosen_loglik(obs, shifted, "mcfadden", beta)
    assert a == b  # corrections are re-centred before exponentiation
    assert individual_chosen_loglik(obs, sets, "none", beta) == a


def test_zero_proposal_scale_always_accepts():
    ds, _ = panel_data()
    obs = obs_of(ds, ds.individual_ids()[0])
    state = MixingState(np.zeros(1), np.eye(1), np.zeros((1, 1)))
    rng = np.random.default_rng(2)
    for _ in range(20):
        beta, accepted = gibbs_step_beta_n(state, 0, obs, None, rng, rho=0.0)
        assert accepted
        assert np.array_equal(beta, np.zeros(1))


def test_mh_chain_on_empty_panel_samples_the_prior():
    """No observations: the MH target is exactly N(mu, sigma)."""
    mu, sd = 0.5, 0.6
    state = MixingState(np.array([mu]), np.array([[sd ** 2]]),
                        np.array([[0.0]]))
    rng = np.random.default_rng(3)
    kept = np.empty(6000)
    for i in range(kept.size):
        beta, _ = gibbs_step_beta_n(state, 0, [], None, rng, rho=2.0)
        state.beta_all[0] = beta
        kept[i] = beta[0]
    kept = kept[1000:]
    assert abs(kept.mean() - mu) < 0.05
    assert abs(kept.std() - sd) < 0.05


# ---------------------------------------------------------------------------
# the full cycle
# ---------------------------------------------------------------------------

def test_run_gibbs_shapes_thinning_and_bookkeeping():
    ds, _ = panel_data(N=20, T=3)
    cfg = GibbsConfig(iterations=60, burn_in=20, thin=5, seed=1,
                      store_beta_n=True)
    out = run_gibbs(ds, MmnlPriors.default_for(1), cfg)
    assert out.draws.shape == (1, 8, 2)  # K + K(K+1)/2 = 2 columns
    assert out.param_names == ["mu_0", "sigma_0_0"]
    assert out.beta_n_draws.shape == (8, 20, 1)
    assert out.individual_acceptance.shape == (20,)
    assert np.all((0.0 <= out.individual_acceptance)
                  & (out.individual_acceptance <= 1.0))
    assert np.array_equal(out.individual_ids, np.unique(ds.individual_ids()))
    # sigma draws stay positive
    assert np.all(out.draws[0, :, 1] > 0.0)


def test_run_gibbs_is_reproducible():
    ds, _ = panel_data(N=15, T=3)
    cfg = GibbsConfig(iterations=80, burn_in=30, seed=9)
    a = run_gibbs(ds, MmnlPriors.default_for(1), cfg)
    b = run_gibbs(ds, MmnlPriors.default_for(1), cfg)
    assert np.array_equal(a.draws, b.draws)
    c = run_gibbs(ds, MmnlPriors.default_for(1),
                  GibbsConfig(iterations=80, burn_in=30, seed=10))
    assert not np.array_equal(a.draws, c.draws)


def test_run_gibbs_uniform_sets_mode_invariant_bitwise():
    """Uniform conditioning: every acceptance decision is unchanged by the
    correction mode, so whole chains coincide bit for bit."""
    ds, _ = panel_data(N=15, T=3, J=5)
    sets = [draw_sampled_set(Protocol("uniform_wor", m=3), o,
                             derive_stream(4, o.obs_id))
            for o in ds.observations]
    chains = [run_gibbs(ds, MmnlPriors.default_for(1),
                        GibbsConfig(iterations=100, burn_in=40, seed=2,
                                    sets=(sets, mode)))
              for mode in ("mcfadden", "none", "uniform_constant")]
    assert np.array_equal(chains[0].draws, chains[1].draws)
    assert np.array_equal(chains[0].draws, chains[2].draws)
    assert np.array_equal(chains[0].individual_acceptance,
                          chains[1].individual_acceptance)


def test_run_gibbs_recovers_location_scaled_down():
    ds, _ = panel_data(seed=6, N=100, T=6, J=4)
    cfg = GibbsConfig(iterations=1200, burn_in=400, seed=3)
    out = run_gibbs(ds, MmnlPriors.default_for(1), cfg)
    mu_draws = out.draws[0, :, 0]
    err = abs(mu_draws.mean() - 0.8)
    assert err < max(3.0 * mu_draws.std(), 0.2)


def test_run_gibbs_validates_set_count():
    ds, _ = panel_data(N=10, T=2)
    sets = [draw_sampled_set(Protocol("uniform_wor", m=2), o,
                             derive_stream(1, o.obs_id))
            for o in ds.observations][:-1]
    with pytest.raises(InvalidInputError):
        run_gibbs(ds, MmnlPriors.default_for(1),
                  GibbsConfig(iterations=10, burn_in=2,
                              sets=(sets, "mcfadden")))


def test_gibbs_config_validation():
    with pytest.raises(InvalidInputError):
        GibbsConfig(iterations=10, burn_in=10)
    with pytest.raises(InvalidInputError):
        GibbsConfig(iterations=10, burn_in=2, thin=0)
    with pytest.raises(InvalidInputError):
        GibbsConfig(iterations=10, burn_in=2, rho=-0.1)
    with pytest.raises(InvalidInputError):
        GibbsConfig(iterations=10, burn_in=2, sets=([], "mcfadden"))
    with pytest.raises(InvalidInputError):
        GibbsConfig(iterations=10, burn_in=2,
                    sets=([SampledSet(np.array([0, 1]), np.zeros(2))], "bogus"))
