"""Posterior sampler and likelihood tests.

The likelihood oracle re-runs the scalar stepper transition by transition;
the prior-recovery check compares the chain against scipy's truncated
normal. Full recovery-accuracy budgets live in test_acceptance.py."""

import numpy as np
import pytest
from scipy import stats

from legmanip.dynamics import (
    AppliedWrench,
    DynamicsParams,
    ObjectState,
    ParamsModel1,
    step,
)
from legmanip.learning import (
    Dataset,
    Episode,
    Prior,
    PriorSpec,
    SamplerFailure,
    default_prior,
    log_likelihood,
    make_synthetic_dataset,
    pack,
    predict_and_score,
    sample_posterior,
    smooth_forces,
    unpack,
)

LEGS = {0: (0.25, 0.25), 1: (-0.25, 0.25), 2: (-0.25, -0.25), 3: (0.25, -0.25)}


def true_model1(sigma=0.01):
    return DynamicsParams(
        ParamsModel1(m=3.0, inertia=0.2, xc=0.05, yc=-0.03, mu_x=2.0, mu_y=9.0, theta_mu=0.2),
        sigma=sigma,
    )


def test_prior_roundtrip_and_validation():
    for kind in (1, 2, 3):
        p = default_prior(kind)
        assert p.model_kind == kind
        vec = p.mus()
        params = unpack(kind, vec)
        assert np.allclose(pack(params), vec)
    with pytest.raises(ValueError):
        PriorSpec(0.0, -1.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        PriorSpec(0.0, 1.0, 2.0, 1.0)
    with pytest.raises(ValueError):
        Prior(1, {"m": PriorSpec(1, 1, 0, 2)})


def test_log_likelihood_matches_per_step_oracle():
    params = true_model1(sigma=0.04)
    data = make_synthetic_dataset(params, LEGS, n_episodes=3, seed=5, duration_range=(2.0, 3.0))
    got = log_likelihood(params, data)

    sig = 0.04
    total = 0.0
    for ep in data.episodes:
        for i in range(len(ep) - 1):
            gp = LEGS[int(ep.leg_ids[i])]
            dt = ep.times[i + 1] - ep.times[i]
            pred = step(
                ObjectState.from_array(ep.states[i]),
                params,
                AppliedWrench(ep.forces[i, 0], ep.forces[i, 1], gp),
                dt,
            ).as_array()
            r = ep.states[i + 1] - pred
            r[2] = np.arctan2(np.sin(r[2]), np.cos(r[2]))
            total += np.sum(-0.5 * np.log(2 * np.pi * sig**2) - 0.5 * (r / sig) ** 2)
    assert got == pytest.approx(total, rel=1e-10)


def test_log_likelihood_empty_dataset_is_zero():
    assert log_likelihood(true_model1(), Dataset([], legs=LEGS)) == 0.0


def test_empty_dataset_posterior_recovers_prior():
    # With no data the chain must reproduce the truncated-normal prior.
    prior = default_prior(3)
    post = sample_posterior(Dataset([], legs=LEGS), prior, n_samples=20000, seed=11)
    thinned = post.samples[::5]
    for j, name in enumerate(prior.names):
        spec = prior.specs[name]
        a = (spec.lower - spec.mu) / spec.sigma
        b = (spec.upper - spec.mu) / spec.sigma
        ks = stats.kstest(thinned[:, j], stats.truncnorm(a, b, spec.mu, spec.sigma).cdf)
        assert ks.statistic < 0.05, f"{name}: KS={ks.statistic:.3f}"


def test_sampler_deterministic_by_seed():
    prior = default_prior(1)
    data = make_synthetic_dataset(true_model1(), LEGS, n_episodes=2, seed=3, duration_range=(2.0, 3.0))
    a = sample_posterior(data, prior, n_samples=2000, seed=7)
    b = sample_posterior(data, prior, n_samples=2000, seed=7)
    c = sample_posterior(data, prior, n_samples=2000, seed=8)
    assert np.array_equal(a.samples, b.samples)
    assert a.acceptance_rate == b.acceptance_rate
    assert not np.array_equal(a.samples, c.samples)


def test_sampler_input_validation():
    prior = default_prior(1)
    with pytest.raises(ValueError):
        sample_posterior(Dataset([], legs=LEGS), prior, n_samples=800, seed=0)
    with pytest.raises(ValueError):
        sample_posterior(Dataset([], legs=LEGS), prior, model_kind=3, n_samples=4000, seed=0)


def test_model1_recovery_smoke():
    truth = true_model1()
    data = make_synthetic_dataset(truth, LEGS, n_episodes=10, seed=21, duration_range=(5.0, 8.0))
    post = sample_posterior(data, default_prior(1), n_samples=6000, seed=1)
    assert 0.05 <= post.acceptance_rate <= 0.9
    mean = {n: v for n, v in zip(post.param_names, post.mean())}
    assert abs(mean["mu_x"] - 2.0) / 2.0 < 0.25
    assert abs(mean["mu_y"] - 9.0) / 9.0 < 0.25
    assert abs(mean["m"] - 3.0) / 3.0 < 0.25
    # posterior spread should give a usable interval for the rest
    lo, hi = post.ci()
    for j, name in enumerate(post.param_names):
        assert lo[j] < hi[j]


def test_posterior_sampling_helpers():
    prior = default_prior(3)
    post = sample_posterior(Dataset([], legs=LEGS), prior, n_samples=4000, seed=2)
    rng = np.random.default_rng(0)
    params = post.sample_params(rng)
    assert params.model_kind == 3
    assert post.samples.shape[0] == 3000
    assert post.mean_params().model_kind == 3


def test_predict_and_score_exact_model_zero_noise():
    truth = true_model1(sigma=0.0)
    data = make_synthetic_dataset(truth, LEGS, n_episodes=2, seed=9, duration_range=(2.0, 3.0))
    scores = predict_and_score(truth, data)
    for s in scores:
        assert s.rmse < 1e-12
        assert s.final_disp_err < 1e-12


def test_predict_feedback_reduces_drift():
    truth = true_model1(sigma=0.0)
    wrong = DynamicsParams(
        ParamsModel1(m=3.0, inertia=0.2, xc=0.05, yc=-0.03, mu_x=3.0, mu_y=6.0, theta_mu=0.0),
        sigma=0.0,
    )
    data = make_synthetic_dataset(truth, LEGS, n_episodes=4, seed=13, duration_range=(6.0, 8.0))
    open_loop = predict_and_score(wrong, data)
    fed = predict_and_score(wrong, data, feedback_period=2.0)
    med_open = np.median([s.final_disp_err for s in open_loop])
    med_fed = np.median([s.final_disp_err for s in fed])
    assert med_fed <= med_open


def test_smooth_forces():
    data = make_synthetic_dataset(true_model1(), LEGS, n_episodes=1, seed=4, duration_range=(2.0, 2.5))
    sm = smooth_forces(data, window=5)
    assert sm.episodes[0].forces.shape == data.episodes[0].forces.shape
    # constant stretch away from switches is untouched
    f = data.episodes[0].forces
    g = sm.episodes[0].forces
    assert np.allclose(g[2], f[2], atol=1e-12)
    with pytest.raises(ValueError):
        smooth_forces(data, window=4)
    with pytest.raises(ValueError):
        smooth_forces(data, window=0)


def test_episode_validation():
    with pytest.raises(ValueError):
        Episode(np.array([0.0, 0.1]), np.zeros((3, 6)), np.zeros((2, 2)), np.zeros(2, dtype=int))
    with pytest.raises(ValueError):
        Episode(np.array([0.0, 0.0]), np.zeros((2, 6)), np.zeros((2, 2)), np.zeros(2, dtype=int))


def test_sampler_failure_type_exists():
    assert issubclass(SamplerFailure, RuntimeError)
