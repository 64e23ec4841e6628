import numpy as np
import pytest

from riskcbf import ControllerConfig, ScenarioConfig, SystemModel, HalfSpaceSafeSet, RiskParams


VEHICLE_A = [[1.0, 0.05], [0.0, 1.0]]
VEHICLE_B = [0.0125, 0.05]
VEHICLE_H = [1.0, 0.0]
VEHICLE_Q = [[7.66e-05, 3.06e-03], [3.06e-03, 1.23e-01]]
VEHICLE_R = 0.09


def vehicle_model() -> SystemModel:
    return SystemModel(A=VEHICLE_A, B=VEHICLE_B, H=VEHICLE_H, Q=VEHICLE_Q, R=VEHICLE_R)


def vehicle_controller(method="proposed_m1", flavor="m1") -> ControllerConfig:
    return ControllerConfig(method=method, flavor=flavor,
                            nominal_gain=[-15.0, -5.0], rho=1e4,
                            phi=np.diag([100.0, 1.0]), theta=np.diag([10.0, 0.1]),
                            eta=[0.0, 100.0], c3=10.0)


def vehicle_scenario(method="proposed_m1", flavor="m1", horizon=80, runs=100,
                     seed=20240601, disturbance="gaussian") -> ScenarioConfig:
    return ScenarioConfig(system=vehicle_model(),
                          safe_set=HalfSpaceSafeSet(q=[0.4, 0.4], r=1.0),
                          risk=RiskParams(epsilon=0.3, alpha=0.7),
                          initial_mean=[7.0, 0.0], initial_cov=VEHICLE_Q,
                          horizon_steps=horizon, num_runs=runs, rng_seed=seed,
                          controller=vehicle_controller(method, flavor),
                          disturbance_model=disturbance)


def vehicle_tree(**sim_overrides) -> dict:
    import copy

    sim = {"horizon_steps": 80, "num_runs": 100, "seed": 20240601}
    sim.update(sim_overrides)
    return copy.deepcopy({
        "system": {"A": VEHICLE_A, "B": VEHICLE_B, "H": VEHICLE_H,
                   "Q": VEHICLE_Q, "R": VEHICLE_R},
        "safe_set": {"type": "half_space", "q": [0.4, 0.4], "r": 1.0},
        "risk": {"epsilon": 0.3, "alpha": 0.7},
        "init": {"mean": [7.0, 0.0], "cov": VEHICLE_Q},
        "sim": sim,
        "controller": {"method": "proposed_m1", "flavor": "m1",
                       "nominal_gain": [-15.0, -5.0], "rho": 1e4,
                       "phi": [[100.0, 0.0], [0.0, 1.0]],
                       "theta": [[10.0, 0.0], [0.0, 0.1]],
                       "eta": [0.0, 100.0], "c3": 10.0},
        "disturbance_model": "gaussian",
    })


def refined_oracle(amb, loss, eps, step=1e-3, chunks=60):
    """Grid oracle located by window refinement, using only oracle calls.

    A wide window centered on E[L] is scanned with a coarse grid one chunk
    at a time; convexity of the dual objective puts the minimizer in the
    best chunk or one of its neighbors, where the requested fine grid runs.
    """
    from riskcbf import oracle_wc_cvar_quadratic

    center = loss.mean_value(amb)
    width = 20.0 * (1.0 + abs(center))
    edges = np.linspace(center - width, center + width, chunks + 1)
    coarse_step = (edges[1] - edges[0]) / 12.0
    vals = [oracle_wc_cvar_quadratic(amb, loss, eps, lo, hi, coarse_step)
            for lo, hi in zip(edges[:-1], edges[1:])]
    best = int(np.argmin(vals))
    assert 0 < best < chunks - 1, "oracle bracket too narrow"
    return oracle_wc_cvar_quadratic(amb, loss, eps, edges[best - 1], edges[best + 2], step)


def rand_psd(rng: np.random.Generator, d: int, scale: float = 1.0) -> np.ndarray:
    a = rng.normal(size=(d, d))
    return scale * (a @ a.T) / d


def rand_pd(rng: np.random.Generator, d: int, scale: float = 1.0) -> np.ndarray:
    return rand_psd(rng, d, scale) + 0.1 * scale * np.eye(d)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
