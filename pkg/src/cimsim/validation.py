"""Checks of the simulator against the oracles, shared by the CLI and the tests."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .integrator import TimeGrid, integrate_batch, step_rk4
from .ising import CouplingMatrix, ground_states_bruteforce, pairwise_afm, ring_afm
from .model import CIMModel, ConstantPump, DOPOParams, PhaseState, StepNoises, reduced_damping, threshold_pump
from .oracles import build_linear_model, lyapunov_residual, ou_mean_decay, stationary_covariance


def rk4_decay_error(params: DOPOParams, dt: float, x0: float = 1.0) -> float:
    """One noise-free RK4 step of pure decay at the reduced damping, compared to the exponential."""
    p = params.with_zeta(0.0)
    model = CIMModel(CouplingMatrix(np.zeros((1, 1))), p, ConstantPump(dt, 0.0), "linear")
    st = PhaseState(np.array([x0 + 0j]), np.array([0j]))
    out = step_rk4(model, st, 0.0, dt, StepNoises.zeros(1))
    return float(abs(out.alpha[0] - ou_mean_decay(reduced_damping(p), x0, dt)))


def rk4_order_table(params: DOPOParams, dts=(0.1, 0.05, 0.025)):
    """``(dt, error, bound)`` rows with bound ``10 (gamma dt)^5``."""
    g = reduced_damping(params)
    return [(dt, rk4_decay_error(params, dt), 10.0 * (g * dt) ** 5) for dt in dts]


def alternating(n: int) -> set:
    a = tuple(1 if i % 2 == 0 else -1 for i in range(n))
    return {a, tuple(-s for s in a)}


def relaxation_time(J: CouplingMatrix, params: DOPOParams, eps_p: float) -> float:
    """Slowest decay time of the linear test mode (inf when unstable)."""
    spec = build_linear_model(J, params, eps_p)
    top = np.max(np.linalg.eigvals(spec.A).real)
    return math.inf if top >= 0 else 1.0 / -top


def simulate_linear_covariance(
    J: CouplingMatrix,
    params: DOPOParams,
    eps_p: float,
    t_end: float,
    dt: float,
    n_sub: int,
    n_per_sub: int,
    seed: int,
    scheme: str = "rk4",
):
    """Covariance of ``(Re alpha, Re beta)`` at ``t_end`` in the linear test mode.

    Returns the mean over subensembles of the per-subensemble sample
    covariance and its standard error, plus the number of lanes that diverged.
    """
    ratio = eps_p / threshold_pump(params)
    model = CIMModel(J, params, ConstantPump(t_end, ratio), "linear")
    grid = TimeGrid.from_dt(t_end, dt)
    n = J.n
    covs, dead = [], 0
    for s in range(n_sub):
        idx = np.arange(s * n_per_sub, (s + 1) * n_per_sub)
        r = integrate_batch(model, grid, seed, idx, [grid.n_steps], scheme)
        dead += int((~r.alive).sum())
        v = np.concatenate([r.final[:, 0], r.final[:, 2]], axis=1)  # (B, 2N): Re alpha, Re beta
        covs.append(np.cov(v[r.alive], rowvar=False).reshape(2 * n, 2 * n))
    covs = np.array(covs)
    return covs.mean(axis=0), covs.std(axis=0, ddof=1) / math.sqrt(n_sub), dead


def covariance_agreement(C_sim, C_err, C_ref, k: float = 3.0):
    """Largest ``|C_sim - C_ref|`` in units of the combined standard error, and pass flag."""
    z = np.abs(C_sim - C_ref) / np.maximum(C_err, 1e-300)
    return float(z.max()), bool(np.all(np.abs(C_sim - C_ref) <= k * C_err))


@dataclass
class Check:
    name: str
    run: Callable[[], tuple]


def run_checks(seed: int = 0, workers: int = 1) -> list[Check]:
    params = DOPOParams()

    def ground():
        start = time.perf_counter()
        for n in (4, 6, 8, 10):
            gs = ground_states_bruteforce(ring_afm(n))
            got = {tuple(int(s) for s in c) for c in gs.configs}
            if gs.energy != -2 * n or got != alternating(n):
                return False, f"ring {n}: energy {gs.energy}, {len(got)} configs"
        took = time.perf_counter() - start
        return took < 1.0, f"rings 4-10 give the alternating pair at -2n in {took:.3f}s"

    def order():
        rows = rk4_order_table(params)
        ok = all(err <= bound for _, err, bound in rows)
        return ok, ", ".join(f"dt={dt}: {err:.2e} <= {bound:.2e}" for dt, err, bound in rows)

    def lyapunov():
        spec = build_linear_model(pairwise_afm(), params, 0.25 * threshold_pump(params))
        C = stationary_covariance(spec)
        res = lyapunov_residual(spec, C)
        sym = float(np.max(np.abs(C - C.T)))
        eig = float(np.min(np.linalg.eigvalsh(C)))
        return res <= 1e-10 and sym <= 1e-12 and eig >= -1e-10, f"residual {res:.1e}, min eigenvalue {eig:.3g}"

    def covariance():
        J, eps_p = pairwise_afm(), 0.25 * threshold_pump(params)
        C = stationary_covariance(build_linear_model(J, params, eps_p))
        t_end = 10.0 * relaxation_time(J, params, eps_p)
        C_sim, C_err, dead = simulate_linear_covariance(J, params, eps_p, t_end, 0.005, 10, 200, seed)
        z, ok = covariance_agreement(C_sim, C_err, C)
        return ok and dead == 0, f"2000 trajectories, worst deviation {z:.2f} stderr"

    return [
        Check("ground-state oracle", ground),
        Check("RK4 order", order),
        Check("Lyapunov solve", lyapunov),
        Check("linear-mode covariance", covariance),
    ]
