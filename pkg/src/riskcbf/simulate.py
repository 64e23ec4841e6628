"""Closed-loop Monte Carlo simulation of the controlled plant.

Each run samples a true initial state from the configured initial
distribution, then repeatedly: asks the controller for an input given the
current belief, propagates the true state with a sampled disturbance, draws
a noisy measurement, and applies the filter's predict/gain/update cycle.
Everything a run does is a pure function of (config, run_seed); ensembles
derive per-run seeds from the scenario seed with a splitmix-style mixer so
results are reproducible and independent of execution order.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import kalman, linalg
from .cbf import belief_risk
from .control import build_controller
from .model import BeliefState, ScenarioConfig, h_value

_MASK64 = (1 << 64) - 1


def mix64(x: int) -> int:
    """splitmix64 finalizer; decorrelates consecutive run indices."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (x ^ (x >> 31)) & _MASK64


def run_seed_for(base_seed: int, run_index: int) -> int:
    return mix64((base_seed ^ run_index) & _MASK64)


class SimulationError(RuntimeError):
    def __init__(self, step: int, message: str):
        super().__init__(f"step {step}: {message}")
        self.step = step


@dataclass(frozen=True)
class TrajectoryRecord:
    """Per-step log of one closed-loop run.

    States, belief statistics, and risk diagnostics have horizon_steps + 1
    entries (t = 0 .. T); inputs, measurements, and relaxation data have
    horizon_steps entries (measurement t goes with the update at t).
    """

    run_seed: int
    states: np.ndarray        # (T+1, n) true states
    measurements: np.ndarray  # (T, n_y), z_1 .. z_T
    means: np.ndarray         # (T+1, n) filtered means
    cov_traces: np.ndarray    # (T+1,)
    inputs: np.ndarray        # (T, m)
    h_true: np.ndarray        # (T+1,)
    h_belief: np.ndarray      # (T+1,)
    belief_risks: np.ndarray  # (T+1,) worst-case CVaR of -h at the belief
    relaxed: np.ndarray       # (T,) bool
    deltas: np.ndarray        # (T,)

    @property
    def horizon_steps(self) -> int:
        return self.inputs.shape[0]


@dataclass(frozen=True)
class EnsembleMetrics:
    controller: str
    num_runs: int
    horizon_steps: int
    violation_rate: float
    mean_min_h: float
    per_step_violation_freq: np.ndarray
    mean_terminal_norm: float
    seed: int

    def to_dict(self) -> dict:
        return {
            "controller": self.controller,
            "num_runs": self.num_runs,
            "horizon_steps": self.horizon_steps,
            "violation_rate": self.violation_rate,
            "mean_min_h": self.mean_min_h,
            "per_step_violation_freq": self.per_step_violation_freq.tolist(),
            "mean_terminal_norm": self.mean_terminal_norm,
            "seed": self.seed,
        }


def _noise_factory(cov: np.ndarray, tag: str):
    """Sampler with exact second moment `cov` for the configured family.

    gaussian: S @ standard_normal. uniform: S @ U(-sqrt(3), sqrt(3)), a
    bounded family with the same covariance.
    """
    root = linalg.psd_sqrt(cov)
    dim = cov.shape[0]
    if tag == "gaussian":
        def sample(rng: np.random.Generator) -> np.ndarray:
            return root @ rng.standard_normal(dim)
    elif tag == "uniform":
        half_width = np.sqrt(3.0)

        def sample(rng: np.random.Generator) -> np.ndarray:
            return root @ rng.uniform(-half_width, half_width, dim)
    else:
        raise ValueError(f"unknown disturbance model {tag!r}")
    return sample


def run_one(config: ScenarioConfig, run_seed: int) -> TrajectoryRecord:
    """Simulate one closed-loop run, fully determined by (config, run_seed).

    Draw order per run: initial state, then (w_t, v_{t+1}) for each step.
    """
    model = config.system
    steps = config.horizon_steps
    rng = np.random.default_rng(run_seed)
    controller = build_controller(config)

    sample_x0 = _noise_factory(config.initial_cov, config.disturbance_model)
    sample_w = _noise_factory(model.Q, config.disturbance_model)
    sample_v = _noise_factory(model.R, config.disturbance_model)

    states = np.empty((steps + 1, model.n))
    measurements = np.empty((steps, model.n_y))
    means = np.empty((steps + 1, model.n))
    cov_traces = np.empty(steps + 1)
    inputs = np.empty((steps, model.m))
    h_true = np.empty(steps + 1)
    h_belief = np.empty(steps + 1)
    belief_risks = np.empty(steps + 1)
    relaxed = np.zeros(steps, dtype=bool)
    deltas = np.zeros(steps)

    belief = BeliefState(mean=config.initial_mean, cov=config.initial_cov, time_index=0)
    x = config.initial_mean + sample_x0(rng)

    def log_state(t: int, x_t: np.ndarray, bel: BeliefState):
        states[t] = x_t
        means[t] = bel.mean
        cov_traces[t] = float(np.trace(bel.cov))
        h_true[t] = h_value(config.safe_set, x_t)
        h_belief[t] = h_value(config.safe_set, bel.mean)
        belief_risks[t] = belief_risk(config.safe_set, bel, config.risk)

    log_state(0, x, belief)
    for t in range(steps):
        try:
            decision = controller(belief)
        except Exception as exc:
            raise SimulationError(t, f"controller failed: {exc}") from exc
        inputs[t] = decision.u
        relaxed[t] = decision.relaxed
        deltas[t] = decision.delta

        x = model.A @ x + model.B @ decision.u + sample_w(rng)
        z = kalman.Measurement(z=model.H @ x + sample_v(rng), time_index=t + 1)
        measurements[t] = z.z

        pred = kalman.predict(belief, model, decision.u)
        gain = kalman.gain(pred, model)
        belief = kalman.update(pred, gain, z, model)
        log_state(t + 1, x, belief)

    return TrajectoryRecord(run_seed=run_seed, states=states, measurements=measurements,
                            means=means, cov_traces=cov_traces, inputs=inputs,
                            h_true=h_true, h_belief=h_belief, belief_risks=belief_risks,
                            relaxed=relaxed, deltas=deltas)


def _worker_count(num_runs: int) -> int:
    cap = os.environ.get("RISKCBF_THREADS", "")
    try:
        workers = int(cap) if cap else 1
    except ValueError:
        workers = 1
    return max(1, min(workers, num_runs))


def run_ensemble(config: ScenarioConfig,
                 num_runs: int | None = None) -> tuple[EnsembleMetrics, list[TrajectoryRecord]]:
    """Run the scenario num_runs times and aggregate safety metrics.

    Run k uses seed mix64(config.rng_seed XOR k); aggregation is by run
    index, so parallel execution (capped by RISKCBF_THREADS) cannot change
    the result.
    """
    if num_runs is None:
        num_runs = config.num_runs
    if num_runs < 1:
        raise ValueError("num_runs must be >= 1")
    seeds = [run_seed_for(config.rng_seed, k) for k in range(num_runs)]

    workers = _worker_count(num_runs)
    records: list[TrajectoryRecord]
    if workers == 1:
        records = []
        for k, seed in enumerate(seeds):
            try:
                records.append(run_one(config, seed))
            except SimulationError as exc:
                raise SimulationError(exc.step, f"run {k}: {exc}") from exc
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(lambda s: run_one(config, s), seeds))

    min_h = np.array([float(np.min(rec.h_true)) for rec in records])
    violations = np.array([np.min(rec.h_true) < 0.0 for rec in records])
    per_step = np.mean([(rec.h_true < 0.0) for rec in records], axis=0)
    terminal = np.array([float(np.linalg.norm(rec.means[-1])) for rec in records])

    metrics = EnsembleMetrics(
        controller=config.controller.method if config.controller.method != "expected_value"
        and config.controller.method != "ignore"
        else f"{config.controller.method}_{config.controller.flavor}",
        num_runs=num_runs,
        horizon_steps=config.horizon_steps,
        violation_rate=float(np.mean(violations)),
        mean_min_h=float(np.mean(min_h)),
        per_step_violation_freq=per_step,
        mean_terminal_norm=float(np.mean(terminal)),
        seed=config.rng_seed,
    )
    return metrics, records
