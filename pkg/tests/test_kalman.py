import numpy as np
import pytest

from riskcbf import BeliefState, Measurement, PredictedBelief, SystemModel, gain, predict, update

from conftest import rand_pd, rand_psd, vehicle_model


def joseph_cov(K, H, P, R):
    """Gain-robust covariance form, used here as the optimality oracle."""
    n = P.shape[0]
    ikh = np.eye(n) - K @ H
    return ikh @ P @ ikh.T + K @ R @ K.T


def random_system(rng, n=None, n_y=None):
    n = n or int(rng.integers(1, 5))
    n_y = n_y or int(rng.integers(1, n + 1))
    return SystemModel(A=rng.normal(size=(n, n)), B=rng.normal(size=(n, 1)),
                       H=rng.normal(size=(n_y, n)), Q=rand_psd(rng, n),
                       R=rand_pd(rng, n_y))


# --- predict -------------------------------------------------------------------

def test_predict_identity_propagation():
    model = SystemModel(A=np.eye(2), B=np.zeros((2, 1)), H=[1.0, 0.0],
                        Q=np.zeros((2, 2)), R=[[0.1]])
    cov0 = np.array([[0.5, 0.1], [0.1, 0.4]])
    pred = predict(BeliefState(mean=[7.0, 0.0], cov=cov0), model, [3.0])
    assert np.array_equal(pred.mean, [7.0, 0.0])
    assert np.allclose(pred.cov, cov0, atol=1e-15)


def test_predict_vehicle_zero_input():
    pred = predict(BeliefState(mean=[7.0, 0.0], cov=np.zeros((2, 2))), vehicle_model(), [0.0])
    assert np.array_equal(pred.mean, [7.0, 0.0])


def test_predict_vehicle_unit_input():
    pred = predict(BeliefState(mean=[0.0, 0.0], cov=np.zeros((2, 2))), vehicle_model(), [1.0])
    assert np.allclose(pred.mean, [0.0125, 0.05], atol=1e-15)


def test_predict_dimension_mismatch():
    with pytest.raises(ValueError):
        predict(BeliefState(mean=[0.0, 0.0], cov=np.eye(2)), vehicle_model(), [1.0, 2.0])


# --- gain ----------------------------------------------------------------------

def test_gain_near_perfect_measurement():
    model = SystemModel(A=np.eye(2), B=np.zeros((2, 1)), H=np.eye(2),
                        Q=np.zeros((2, 2)), R=1e-12 * np.eye(2))
    K = gain(PredictedBelief(mean=np.zeros(2), cov=np.eye(2)), model)
    assert np.allclose(K, np.eye(2), atol=1e-9)


def test_gain_zero_covariance():
    K = gain(PredictedBelief(mean=np.zeros(2), cov=np.zeros((2, 2))), vehicle_model())
    assert np.array_equal(K, np.zeros((2, 1)))


def test_gain_zero_covariance_with_singular_s():
    model = SystemModel(A=np.eye(2), B=np.zeros((2, 1)), H=[1.0, 0.0],
                        Q=np.zeros((2, 2)), R=[[0.0]])
    K = gain(PredictedBelief(mean=np.zeros(2), cov=np.zeros((2, 2))), model)
    assert np.array_equal(K, np.zeros((2, 1)))


def test_gain_singular_s_raises():
    # Duplicated noiseless measurement rows make S rank-deficient while
    # P H' stays nonzero, so no well-defined gain limit exists.
    model = SystemModel(A=np.eye(2), B=np.zeros((2, 1)), H=[[1.0, 0.0], [1.0, 0.0]],
                        Q=np.zeros((2, 2)), R=np.zeros((2, 2)))
    with pytest.raises(np.linalg.LinAlgError):
        gain(PredictedBelief(mean=np.zeros(2), cov=np.eye(2)), model)


def test_gain_vehicle_hand_evaluation():
    # P = Q gives K = Q H' / (Q[0,0] + 0.09), evaluated by independent
    # matrix arithmetic below.
    model = vehicle_model()
    K = gain(PredictedBelief(mean=np.zeros(2), cov=model.Q), model)
    s = model.H @ model.Q @ model.H.T + model.R
    expected = model.Q @ model.H.T @ np.linalg.inv(s)
    assert np.allclose(K, expected, rtol=1e-12)
    assert K[0, 0] == pytest.approx(7.66e-5 / 0.0900766, rel=1e-9)
    assert K[1, 0] == pytest.approx(3.06e-3 / 0.0900766, rel=1e-9)


# --- update --------------------------------------------------------------------

def test_update_zero_gain_keeps_prediction():
    model = vehicle_model()
    pred = PredictedBelief(mean=[1.0, 2.0], cov=0.3 * np.eye(2))
    belief = update(pred, np.zeros((2, 1)), Measurement(z=[5.0], time_index=3), model)
    assert np.array_equal(belief.mean, pred.mean)
    assert np.allclose(belief.cov, pred.cov, atol=1e-15)
    assert belief.time_index == 3


def test_update_full_trust():
    model = SystemModel(A=np.eye(2), B=np.zeros((2, 1)), H=np.eye(2),
                        Q=np.zeros((2, 2)), R=np.eye(2))
    pred = PredictedBelief(mean=[0.0, 0.0], cov=np.eye(2))
    belief = update(pred, np.eye(2), Measurement(z=[1.0, -2.0], time_index=1), model)
    assert np.array_equal(belief.mean, [1.0, -2.0])
    assert np.allclose(belief.cov, np.zeros((2, 2)), atol=1e-15)


def test_update_zero_innovation(rng):
    model = random_system(rng, n=3, n_y=2)
    pred = PredictedBelief(mean=rng.normal(size=3), cov=rand_psd(rng, 3))
    K = gain(pred, model)
    z = Measurement(z=model.H @ pred.mean, time_index=1)
    belief = update(pred, K, z, model)
    assert np.allclose(belief.mean, pred.mean, atol=1e-12)
    expected = (np.eye(3) - K @ model.H) @ pred.cov
    assert np.allclose(belief.cov, 0.5 * (expected + expected.T), atol=1e-10)


# --- gain optimality and covariance behavior -------------------------------------

def test_gain_minimizes_joseph_trace(rng):
    for _ in range(25):
        model = random_system(rng)
        pred = PredictedBelief(mean=np.zeros(model.n), cov=rand_psd(rng, model.n))
        K = gain(pred, model)
        base = np.trace(joseph_cov(K, model.H, pred.cov, model.R))
        for _ in range(100):
            dK = rng.normal(size=K.shape)
            dK *= rng.uniform(0.0, 0.1) / max(np.linalg.norm(dK), 1e-12)
            perturbed = np.trace(joseph_cov(K + dK, model.H, pred.cov, model.R))
            assert perturbed >= base - 1e-9


def test_update_form_matches_joseph_at_optimum(rng):
    for _ in range(25):
        model = random_system(rng)
        pred = PredictedBelief(mean=np.zeros(model.n), cov=rand_psd(rng, model.n))
        K = gain(pred, model)
        short_form = (np.eye(model.n) - K @ model.H) @ pred.cov
        jos = joseph_cov(K, model.H, pred.cov, model.R)
        assert np.allclose(short_form, jos, rtol=1e-9, atol=1e-12)


def test_update_never_increases_trace(rng):
    for _ in range(50):
        model = random_system(rng)
        pred = PredictedBelief(mean=np.zeros(model.n), cov=rand_psd(rng, model.n))
        K = gain(pred, model)
        belief = update(pred, K, Measurement(z=rng.normal(size=model.n_y), time_index=1), model)
        assert np.trace(belief.cov) <= np.trace(pred.cov) + 1e-12


def test_filter_unbiased_monte_carlo(rng):
    # 1e5 runs of a 10-step scenario, vectorized across runs: the gain and
    # covariance sequences are data-independent, so all runs share them.
    model = vehicle_model()
    n_runs, steps = 100_000, 10
    mean0 = np.array([7.0, 0.0])
    root_q = np.linalg.cholesky(model.Q + 1e-15 * np.eye(2))
    x = mean0 + rng.standard_normal((n_runs, 2)) @ root_q.T
    xb = np.tile(mean0, (n_runs, 1))
    P = model.Q.copy()
    for t in range(steps):
        u = -0.5 * xb[:, 0] - 0.5 * xb[:, 1]  # any stabilizing feedback
        w = rng.standard_normal((n_runs, 2)) @ root_q.T
        x = x @ model.A.T + np.outer(u, model.B[:, 0]) + w
        z = x @ model.H.T + np.sqrt(model.R[0, 0]) * rng.standard_normal((n_runs, 1))
        xb = xb @ model.A.T + np.outer(u, model.B[:, 0])
        P = model.A @ P @ model.A.T + model.Q
        K = gain(PredictedBelief(mean=np.zeros(2), cov=P), model)
        xb = xb + (z - xb @ model.H.T) @ K.T
        P = (np.eye(2) - K @ model.H) @ P
        P = 0.5 * (P + P.T)
    err = x - xb
    avg = err.mean(axis=0)
    stderr = err.std(axis=0, ddof=1) / np.sqrt(n_runs)
    assert np.linalg.norm(avg) <= 4.0 * np.linalg.norm(stderr)
