import numpy as np
import pytest

from riskcbf import (MomentAmbiguitySet, QuadraticLoss, SecondMomentMatrix,
                     linear_bound, oracle_wc_cvar_quadratic, wc_cvar_elementwise,
                     wc_cvar_linear, wc_cvar_quadratic)
from riskcbf.wc_cvar import _dual_objective_factory

from conftest import rand_psd


def zero_mean(sigma):
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    return MomentAmbiguitySet(mu=np.zeros(sigma.shape[0]), sigma=sigma)


def linear_as_quadratic(q):
    """QuadraticLoss representing the loss q . xi (the loss carries 2 q_loss . xi)."""
    q = np.atleast_1d(q)
    return QuadraticLoss(P=np.zeros((q.shape[0], q.shape[0])), q=q / 2.0, r=0.0)


# --- closed-form linear case ---------------------------------------------------

def test_linear_unit_direction():
    assert wc_cvar_linear(zero_mean(np.eye(2)), [1.0, 0.0], 0.5) == pytest.approx(1.0, abs=1e-12)


def test_linear_zero_loss():
    assert wc_cvar_linear(zero_mean(np.eye(2)), [0.0, 0.0], 0.5) == 0.0


def test_linear_eps03():
    assert wc_cvar_linear(zero_mean([[1.0]]), [1.0], 0.3) == pytest.approx(np.sqrt(7.0 / 3.0),
                                                                           abs=1e-12)


def test_linear_requires_zero_mean():
    amb = MomentAmbiguitySet(mu=[0.1], sigma=[[1.0]])
    with pytest.raises(ValueError):
        wc_cvar_linear(amb, [1.0], 0.5)


@pytest.mark.parametrize("eps", [0.0, 1.0, -0.3, 1.5])
def test_epsilon_range_checked(eps):
    with pytest.raises(ValueError):
        wc_cvar_linear(zero_mean([[1.0]]), [1.0], eps)


def test_linear_dimension_mismatch():
    with pytest.raises(ValueError):
        wc_cvar_linear(zero_mean(np.eye(2)), [1.0, 0.0, 0.0], 0.5)


def test_linear_scales_with_norm_and_rotation(rng):
    sigma = rand_psd(rng, 3)
    amb = zero_mean(sigma)
    q = rng.normal(size=3)
    base = wc_cvar_linear(amb, q, 0.4)
    for c in (0.5, 2.0, 10.0):
        assert wc_cvar_linear(amb, c * q, 0.4) == pytest.approx(c * base, rel=1e-12)
    u, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    rotated = MomentAmbiguitySet(mu=np.zeros(3), sigma=u @ sigma @ u.T)
    assert wc_cvar_linear(rotated, u @ q, 0.4) == pytest.approx(base, rel=1e-10)


# --- quadratic case via the dual reduction -------------------------------------

def test_quadratic_constant_loss():
    amb = zero_mean(rand_psd(np.random.default_rng(7), 3))
    loss = QuadraticLoss(P=np.zeros((3, 3)), q=np.zeros(3), r=3.7)
    assert wc_cvar_quadratic(amb, loss, 0.37) == pytest.approx(3.7, abs=1e-8)


def test_quadratic_square_loss():
    # sup CVaR_{0.5}[xi^2] = 2.0 for unit variance: the dual is
    # g(beta) = beta + 2*(1 + max(-beta, 0)), minimized at beta = 0.
    amb = zero_mean([[1.0]])
    loss = QuadraticLoss(P=[[1.0]], q=[0.0], r=0.0)
    assert wc_cvar_quadratic(amb, loss, 0.5) == pytest.approx(2.0, abs=1e-8)


def test_quadratic_of_linear_loss():
    # Loss xi (q_loss = 0.5 so 2 q_loss xi = xi): the dual reduces to
    # g(beta) = sqrt(beta^2 + 1) with minimum 1.0 at beta = 0, matching the
    # closed form for the identical linear loss. (The beta-grid oracle agrees;
    # wc_cvar_linear(q=0.5) = 0.5 is the value of the *different* loss 0.5 xi.)
    amb = zero_mean([[1.0]])
    value = wc_cvar_quadratic(amb, QuadraticLoss(P=[[0.0]], q=[0.5], r=0.0), 0.5)
    assert value == pytest.approx(1.0, abs=1e-8)
    assert value == pytest.approx(wc_cvar_linear(amb, [1.0], 0.5), abs=1e-8)
    oracle = oracle_wc_cvar_quadratic(amb, QuadraticLoss(P=[[0.0]], q=[0.5], r=0.0),
                                      0.5, -10.0, 10.0, 1e-3)
    assert value == pytest.approx(oracle, abs=1e-3)


def test_quadratic_dominates_mean(rng):
    for _ in range(25):
        d = int(rng.integers(1, 5))
        amb = MomentAmbiguitySet(mu=rng.normal(size=d), sigma=rand_psd(rng, d))
        loss = QuadraticLoss(P=rng.normal(size=(d, d)), q=rng.normal(size=d), r=rng.normal())
        eps = float(rng.uniform(0.1, 0.9))
        assert wc_cvar_quadratic(amb, loss, eps) >= loss.mean_value(amb) - 1e-8


def test_quadratic_matches_linear_closed_form(rng):
    worst = 0.0
    for _ in range(100):
        d = int(rng.integers(1, 7))
        amb = zero_mean(rand_psd(rng, d))
        q = rng.normal(size=d)
        eps = float(rng.uniform(0.05, 0.95))
        lin = wc_cvar_linear(amb, q, eps)
        quad = wc_cvar_quadratic(amb, linear_as_quadratic(q), eps)
        worst = max(worst, abs(lin - quad))
    assert worst <= 1e-7


# --- oracle ---------------------------------------------------------------------

def test_oracle_square_loss_grid():
    amb = zero_mean([[1.0]])
    loss = QuadraticLoss(P=[[1.0]], q=[0.0], r=0.0)
    assert oracle_wc_cvar_quadratic(amb, loss, 0.5, -10.0, 10.0, 1e-3) == pytest.approx(2.0,
                                                                                        abs=1e-3)


def test_oracle_constant_loss():
    amb = zero_mean(np.eye(2))
    loss = QuadraticLoss(P=np.zeros((2, 2)), q=np.zeros(2), r=3.7)
    assert oracle_wc_cvar_quadratic(amb, loss, 0.5, -5.0, 10.0, 1e-3) == pytest.approx(3.7,
                                                                                       abs=2e-3)


def test_oracle_agrees_on_random_psd_instances(rng):
    from conftest import refined_oracle

    step = 1e-3
    for _ in range(100):
        d = int(rng.integers(1, 7))
        amb = MomentAmbiguitySet(mu=rng.normal(size=d) * rng.integers(0, 2),
                                 sigma=rand_psd(rng, d))
        loss = QuadraticLoss(P=rand_psd(rng, d), q=rng.normal(size=d),
                             r=float(rng.uniform(-1.0, 1.0)))
        eps = float(rng.uniform(0.1, 0.9))
        fast = wc_cvar_quadratic(amb, loss, eps)
        fine = refined_oracle(amb, loss, eps, step=step)
        assert abs(fast - fine) <= max(1e-6, step)


def test_oracle_input_validation():
    amb = zero_mean([[1.0]])
    loss = QuadraticLoss(P=[[1.0]], q=[0.0], r=0.0)
    with pytest.raises(ValueError):
        oracle_wc_cvar_quadratic(amb, loss, 0.5, 2.0, -2.0, 1e-3)


# --- element-wise form and the linear bound -------------------------------------

def test_elementwise_identity():
    vals = wc_cvar_elementwise(zero_mean(np.eye(2)), np.eye(2), 0.5)
    assert np.allclose(vals, [1.0, 1.0], atol=1e-12)


def test_elementwise_zero_matrix():
    assert np.array_equal(wc_cvar_elementwise(zero_mean(np.eye(3)), np.zeros((3, 2)), 0.3),
                          np.zeros(2))


def test_elementwise_duplicated_columns(rng):
    sigma = rand_psd(rng, 3)
    col = rng.normal(size=3)
    vals = wc_cvar_elementwise(zero_mean(sigma), np.column_stack([col, col]), 0.25)
    assert vals[0] == pytest.approx(vals[1], rel=1e-14)
    assert vals[0] == pytest.approx(wc_cvar_linear(zero_mean(sigma), col, 0.25), rel=1e-14)


def test_linear_bound_loose_case():
    amb = zero_mean(np.eye(2))
    assert linear_bound(amb, [1.0, 1.0], 0.5) == pytest.approx(2.0, abs=1e-12)
    assert wc_cvar_linear(amb, [1.0, 1.0], 0.5) == pytest.approx(np.sqrt(2.0), abs=1e-12)


def test_linear_bound_tight_on_single_axis(rng):
    sigma = np.diag(rng.uniform(0.1, 2.0, size=3))
    amb = zero_mean(sigma)
    q = np.array([0.0, -1.7, 0.0])
    assert linear_bound(amb, q, 0.4) == pytest.approx(wc_cvar_linear(amb, q, 0.4), rel=1e-14)


def test_linear_bound_zero():
    assert linear_bound(zero_mean(np.eye(2)), [0.0, 0.0], 0.5) == 0.0


def test_linear_bound_dominates(rng):
    for _ in range(100):
        d = int(rng.integers(1, 6))
        amb = zero_mean(rand_psd(rng, d))
        q = rng.normal(size=d)
        eps = float(rng.uniform(0.05, 0.95))
        assert linear_bound(amb, q, eps) >= wc_cvar_linear(amb, q, eps) - 1e-9


# --- coherence axioms ------------------------------------------------------------

def rand_loss(rng, d, psd=False):
    p = rand_psd(rng, d) if psd else np.asarray(rng.normal(size=(d, d)))
    return QuadraticLoss(P=p, q=rng.normal(size=d), r=float(rng.normal()))


def test_coherence_axioms(rng):
    for _ in range(50):
        d = int(rng.integers(1, 5))
        amb = MomentAmbiguitySet(mu=rng.normal(size=d) * rng.integers(0, 2),
                                 sigma=rand_psd(rng, d))
        eps = float(rng.uniform(0.15, 0.85))
        l1, l2 = rand_loss(rng, d), rand_loss(rng, d)
        v1 = wc_cvar_quadratic(amb, l1, eps)
        v2 = wc_cvar_quadratic(amb, l2, eps)
        total = QuadraticLoss(P=l1.P + l2.P, q=l1.q + l2.q, r=l1.r + l2.r)
        assert wc_cvar_quadratic(amb, total, eps) <= v1 + v2 + 1e-7

        for c in (0.5, 2.0, 10.0):
            scaled = QuadraticLoss(P=c * l1.P, q=c * l1.q, r=c * l1.r)
            assert wc_cvar_quadratic(amb, scaled, eps) == pytest.approx(c * v1, abs=1e-7)

        # Dominating loss: PSD increment on P, zero on q, nonnegative on r.
        bump = QuadraticLoss(P=l1.P + rand_psd(rng, d), q=l1.q,
                             r=l1.r + float(rng.uniform(0.0, 2.0)))
        assert v1 <= wc_cvar_quadratic(amb, bump, eps) + 1e-7

        shift = float(rng.normal())
        shifted = QuadraticLoss(P=l1.P, q=l1.q, r=l1.r + shift)
        assert wc_cvar_quadratic(amb, shifted, eps) == pytest.approx(v1 + shift, abs=1e-7)


def test_upper_bounds_empirical_gaussian_cvar(rng):
    d = 3
    amb = MomentAmbiguitySet(mu=rng.normal(size=d), sigma=rand_psd(rng, d))
    loss = rand_loss(rng, d, psd=True)
    eps = 0.2
    n = 1_000_000
    root = np.linalg.cholesky(amb.sigma + 1e-12 * np.eye(d))
    xi = amb.mu + rng.standard_normal((n, d)) @ root.T
    samples = np.einsum("ij,jk,ik->i", xi, loss.P, xi) + 2.0 * xi @ loss.q + loss.r
    k = int(np.ceil(eps * n))
    tail = np.sort(samples)[-k:]
    empirical = float(np.mean(tail))
    stderr = float(np.std(tail, ddof=1) / np.sqrt(k))
    assert empirical <= wc_cvar_quadratic(amb, loss, eps) + 3.0 * stderr


def test_dual_objective_convex_in_beta(rng):
    for _ in range(20):
        d = int(rng.integers(1, 5))
        amb = MomentAmbiguitySet(mu=rng.normal(size=d), sigma=rand_psd(rng, d))
        loss = rand_loss(rng, d)
        g, _ = _dual_objective_factory(amb, loss, float(rng.uniform(0.1, 0.9)))
        b1, b3 = np.sort(rng.normal(scale=5.0, size=2))
        b2 = 0.5 * (b1 + b3)
        assert g(b2) <= 0.5 * (g(b1) + g(b3)) + 1e-9


# --- types ------------------------------------------------------------------------

def test_second_moment_matrix_layout():
    amb = MomentAmbiguitySet(mu=[1.0, -2.0], sigma=np.eye(2))
    om = SecondMomentMatrix.from_moments(amb).omega
    assert np.array_equal(om[:2, :2], np.eye(2) + np.outer([1.0, -2.0], [1.0, -2.0]))
    assert np.array_equal(om[:2, 2], [1.0, -2.0])
    assert om[2, 2] == 1.0


def test_second_moment_matrix_corner_validated():
    with pytest.raises(ValueError):
        SecondMomentMatrix(omega=np.eye(3) * 2.0)


def test_quadratic_loss_symmetrizes():
    loss = QuadraticLoss(P=[[1.0, 2.0], [0.0, 1.0]], q=[0.0, 0.0], r=0.0)
    assert np.array_equal(loss.P, loss.P.T)


def test_ambiguity_rejects_asymmetric_sigma():
    with pytest.raises(ValueError):
        MomentAmbiguitySet(mu=[0.0, 0.0], sigma=[[1.0, 0.2], [0.1, 1.0]])
