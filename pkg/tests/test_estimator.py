import numpy as np
import pytest
from hypothesis import given, strategies as st

from scribbleseg.core import make_rng
from scribbleseg.estimator import (ClassUnobserved, DegeneratePosterior, PosteriorBatch, adapt_posterior,
                                   em_step, estimate_pi, init_pi, log_likelihood, synthetic_posteriors)


def random_batch(seed, n=50, m=3):
    rng = np.random.default_rng(seed)
    p = rng.dirichlet(np.ones(m) * 0.7, size=n)
    f = rng.dirichlet(np.ones(m) * 2)
    return PosteriorBatch(p, np.maximum(f, 1e-3) / np.maximum(f, 1e-3).sum())


def test_init_pi():
    assert np.allclose(init_pi(np.array([50, 30, 20])), [0.5, 0.3, 0.2])
    with pytest.raises(ClassUnobserved):
        init_pi(np.array([10, 0, 0]))
    labels = np.random.default_rng(0).integers(0, 3, 200)
    counts = np.array([sum(1 for v in labels if v == k) for k in range(3)])
    assert np.allclose(init_pi(np.bincount(labels)), counts / 200)


def test_batch_requires_observed_classes():
    with pytest.raises(ClassUnobserved):
        PosteriorBatch(np.full((2, 2), 0.5), np.array([1.0, 0.0]))


def test_adapt_identity_when_prior_matches():
    b = random_batch(1)
    assert np.allclose(adapt_posterior(b, b.labeled_freq), b.posteriors, atol=1e-12)


def test_adapt_uniform_posteriors_hand():
    f = np.array([0.5, 0.25, 0.25])
    pi = np.array([0.2, 0.3, 0.5])
    b = PosteriorBatch(np.full((1, 3), 1 / 3), f)
    # pi_k / f_k = (0.4, 1.2, 2.0), normalized by 3.6
    assert np.allclose(adapt_posterior(b, pi)[0], [0.4 / 3.6, 1.2 / 3.6, 2.0 / 3.6])


def test_adapt_degenerate_prior():
    b = random_batch(2)
    out = adapt_posterior(b, [0.0, 1.0, 0.0])
    assert np.allclose(out[:, 1], 1.0)
    zero = PosteriorBatch(np.array([[1.0, 0.0]]), np.array([0.5, 0.5]))
    with pytest.raises(DegeneratePosterior):
        adapt_posterior(zero, [0.0, 1.0])


def test_em_step_cases():
    b = PosteriorBatch(np.tile([1.0, 0.0, 0.0], (5, 1)), np.full(3, 1 / 3))
    assert np.allclose(em_step(b, [0.2, 0.3, 0.5]), [1, 0, 0])
    b = PosteriorBatch(np.array([[1.0, 0.0], [0.0, 1.0]]), np.array([0.5, 0.5]))
    assert np.allclose(em_step(b, [0.5, 0.5]), [0.5, 0.5])


def test_em_step_direct_sum():
    post = np.array([[0.6, 0.3, 0.1], [0.2, 0.2, 0.6], [0.1, 0.8, 0.1], [0.3, 0.3, 0.4]])
    f = np.array([0.5, 0.3, 0.2])
    pi = np.array([0.25, 0.25, 0.5])
    expected = [0.0, 0.0, 0.0]
    for row in post:
        terms = [pi[k] * row[k] / f[k] for k in range(3)]
        for k in range(3):
            expected[k] += terms[k] / sum(terms) / 4
    assert np.allclose(em_step(PosteriorBatch(post, f), pi), expected, atol=1e-15)


def test_fixed_point_converges_in_one_step():
    b = PosteriorBatch(np.array([[1.0, 0.0], [0.0, 1.0]]), np.array([0.5, 0.5]))
    est = estimate_pi(b, [0.5, 0.5])
    assert est.converged and est.iterations == 1
    assert np.allclose(est.pi, [0.5, 0.5])


def test_trace_layout():
    b = random_batch(4)
    pi0 = b.labeled_freq
    est = estimate_pi(b, pi0, max_iter=5, tol=1e-15)
    assert len(est.trace) == est.iterations + 1
    assert est.trace[0] == pytest.approx(log_likelihood(b, pi0))
    assert est.trace[-1] == pytest.approx(log_likelihood(b, est.pi))


@given(st.integers(0, 2**32), st.integers(2, 5))
def test_em_monotone_and_on_simplex(seed, m):
    b = random_batch(seed, n=60, m=m)
    est = estimate_pi(b, b.labeled_freq, tol=1e-10, max_iter=60)
    assert np.all(np.diff(est.trace) >= -1e-9)
    assert abs(est.pi.sum() - 1) < 1e-9 and np.all(est.pi >= 0)


def test_relabeling_equivariance():
    b = random_batch(7)
    perm = np.array([2, 0, 1])
    est = estimate_pi(b, b.labeled_freq)
    est_p = estimate_pi(PosteriorBatch(b.posteriors[:, perm], b.labeled_freq[perm]), b.labeled_freq[perm])
    assert np.allclose(est_p.pi, est.pi[perm], atol=1e-12)


def test_recovers_synthetic_mixture():
    pi = np.array([0.7, 0.2, 0.1])
    batch, _ = synthetic_posteriors(pi, 10_000, np.full(3, 1 / 3), make_rng(0))
    est = estimate_pi(batch, np.full(3, 1 / 3))
    assert np.abs(est.pi - pi).sum() < 0.02
    assert est.converged
