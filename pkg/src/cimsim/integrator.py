"""Fixed-step stochastic integration of phase-space trajectories.

Two routes implement the same schemes:

* :func:`step_rk4` / :func:`step_euler` act on a :class:`~cimsim.model.CIMModel`
  and a single :class:`~cimsim.model.PhaseState`. They are slow and easy to read.
* :func:`integrate_batch` advances many trajectories at once with compiled
  kernels. :func:`integrate_trajectory` is the one-lane special case.

RK4 holds the step's Gaussian values fixed across all four stages, which
converges to the Stratonovich solution. During positive-P spikes the drift
gets stiff enough to make a fixed RK4 step explode although the exact path
returns; such steps are split into substeps that keep the same noise values.
Euler-Maruyama is the Ito reference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import InvalidArgument, NumericalFailure
from .model import CIMModel, PhaseState, StepNoises, reduced_damping
from ._kernels import MAX_SUBSTEPS, SUBSTEP_LIMIT
from .noise import MAX_STEPS, NoiseStream, lane_counters, seed_key

DEFAULT_OBSERVATIONS = 101
SCHEMES = ("rk4", "euler")


@dataclass(frozen=True)
class TimeGrid:
    t_max: float
    n_steps: int

    def __post_init__(self):
        if not (self.t_max > 0 and math.isfinite(self.t_max)):
            raise InvalidArgument(f"t_max must be positive, got {self.t_max}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise InvalidArgument(f"n_steps must be a positive integer, got {self.n_steps}")
        object.__setattr__(self, "n_steps", int(self.n_steps))

    @classmethod
    def from_dt(cls, t_max: float, dt: float) -> TimeGrid:
        if not dt > 0:
            raise InvalidArgument(f"dt must be positive, got {dt}")
        return cls(t_max, max(1, round(t_max / dt)))

    @property
    def dt(self) -> float:
        return self.t_max / self.n_steps

    def times(self, steps) -> np.ndarray:
        return np.asarray(steps) * self.dt

    def observation_steps(self, count: int = DEFAULT_OBSERVATIONS) -> np.ndarray:
        """``count`` grid indices spread evenly over ``[0, n_steps]`` (duplicates dropped)."""
        if count < 1:
            raise InvalidArgument("need at least one observation time")
        if count == 1:
            return np.array([self.n_steps], dtype=np.int64)
        return np.unique(np.rint(np.linspace(0, self.n_steps, count)).astype(np.int64))


@dataclass
class TrajectoryResult:
    final_state: PhaseState
    times: np.ndarray
    x: np.ndarray  # (n_obs, N) complex quadratures
    photon_number: np.ndarray  # (n_obs, N) complex beta*alpha
    max_abs: float
    success: bool | None = None


@dataclass
class BatchResult:
    """Raw output of :func:`integrate_batch` with the batch axis first."""

    trajectory_indices: np.ndarray
    final: np.ndarray  # (B, components, N) real
    obs: np.ndarray  # (B, n_obs, 4, N): Re x, Im x, Re n, Im n
    alive: np.ndarray
    fail_step: np.ndarray
    max_abs: np.ndarray

    @property
    def final_x(self) -> np.ndarray:
        return (self.final[:, 0] + self.final[:, 2]) + 1j * (self.final[:, 1] + self.final[:, 3])

    @property
    def obs_x(self) -> np.ndarray:
        return self.obs[:, :, 0] + 1j * self.obs[:, :, 1]

    @property
    def obs_photon_number(self) -> np.ndarray:
        return self.obs[:, :, 2] + 1j * self.obs[:, :, 3]


def default_scheme(variant: str) -> str:
    return "euler" if variant == "full-ito" else "rk4"


def _check_scheme(model: CIMModel, scheme: str):
    if scheme not in SCHEMES:
        raise InvalidArgument(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    if scheme == "rk4" and model.variant == "full-ito":
        raise InvalidArgument("the full model has Ito multiplicative noise; integrate it with euler")


def _rk4_combine(y, ks, dt):
    k1, k2, k3, k4 = ks
    return y + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _failure(kind, step):
    return NumericalFailure(f"non-finite state in {kind} step {step}", step=step)


def _rk4_single(f, y, t, h):
    k1 = f(y, t)
    k2 = f(y + 0.5 * h * k1, t + 0.5 * h)
    k3 = f(y + 0.5 * h * k2, t + 0.5 * h)
    k4 = f(y + h * k3, t + h)
    return _rk4_combine(y, (k1, k2, k3, k4), h)


def step_rk4(model: CIMModel, state: PhaseState, t: float, dt: float, noises: StepNoises, step=None) -> PhaseState:
    """One classical RK4 step of drift plus noise with ``noises`` frozen over the stages.

    If the model's stiffness bound times ``dt`` exceeds ``SUBSTEP_LIMIT`` the
    step is covered by smaller RK4 substeps with the same frozen noise.
    """
    pump = model.has_pump

    def f(v, tt):
        return model.rhs(PhaseState.from_vector(v, pump), tt, noises).to_vector()

    def rate(v, tt):
        stiffness = getattr(model, "stiffness", None)
        return 0.0 if stiffness is None else stiffness(PhaseState.from_vector(v, pump), tt)

    y = state.to_vector()
    with np.errstate(over="ignore", invalid="ignore"):
        try:
            if not rate(y, t) * dt > SUBSTEP_LIMIT:
                out = _rk4_single(f, y, t, dt)
            else:
                out, rem, tt = y, dt, t
                for _ in range(MAX_SUBSTEPS):
                    r = rate(out, tt)
                    if not r * rem < SUBSTEP_LIMIT * MAX_SUBSTEPS:
                        raise _failure("RK4", step)
                    m = max(1, math.ceil(rem * r / SUBSTEP_LIMIT))
                    h = rem / m
                    out = _rk4_single(f, out, tt, h)
                    if m == 1:
                        break
                    tt += h
                    rem -= h
                else:
                    raise _failure("RK4", step)
        except NumericalFailure as exc:
            raise _failure("RK4", step) from exc
    if not np.all(np.isfinite(out)):
        raise _failure("RK4", step)
    return PhaseState.from_vector(out, pump)


def step_euler(model: CIMModel, state: PhaseState, t: float, dt: float, noises: StepNoises, step=None) -> PhaseState:
    """Euler-Maruyama step; the adiabatic model switches to its Ito drift."""
    y = state.to_vector()
    with np.errstate(over="ignore", invalid="ignore"):
        try:
            out = y + dt * model.rhs(state, t, noises, ito=True).to_vector()
        except NumericalFailure as exc:
            raise _failure("Euler", step) from exc
    if not np.all(np.isfinite(out)):
        raise _failure("Euler", step)
    return PhaseState.from_vector(out, model.has_pump)


def _kernel_args(model: CIMModel, scheme: str):
    p = model.params
    pump0, slope = model.schedule.coefficients(p)
    if model.variant == "full-ito":
        damping = p.gamma
    elif scheme == "euler" and model.variant == "adiabatic-strat":
        damping = p.gamma
    else:
        damping = reduced_damping(p)
    indptr, indices, values = model.J.to_sparse_rows()
    return dict(
        pump0=float(pump0), slope=float(slope), damping=float(damping), kappa=float(p.kappa),
        gamma_p=float(p.gamma_p), zeta=float(p.zeta), fb_scale=float(p.measurement_noise_scale),
        linear=model.variant == "linear", indptr=indptr, indices=indices, values=values,
    )


def integrate_batch(
    model: CIMModel,
    grid: TimeGrid,
    master_seed: int,
    trajectory_indices,
    observation_steps=None,
    scheme: str | None = None,
) -> BatchResult:
    """Integrate the listed trajectories from vacuum to ``grid.t_max``."""
    scheme = scheme or default_scheme(model.variant)
    _check_scheme(model, scheme)
    if model.schedule.t_max != grid.t_max:
        raise InvalidArgument("pump schedule and time grid disagree on t_max")
    idx = np.asarray(trajectory_indices, dtype=np.int64)
    if idx.ndim != 1 or idx.size == 0:
        raise InvalidArgument("need a non-empty 1-d list of trajectory indices")
    if observation_steps is None:
        observation_steps = grid.observation_steps()
    obs_steps = np.asarray(observation_steps, dtype=np.int64)
    if np.any(np.diff(obs_steps) <= 0) or obs_steps.min() < 0 or obs_steps.max() > grid.n_steps:
        raise InvalidArgument("observation steps must be strictly increasing grid indices")

    if grid.n_steps >= MAX_STEPS:
        raise InvalidArgument(f"at most {MAX_STEPS - 1} steps per trajectory")

    n, nb = model.n, idx.size
    nc = 8 if model.has_pump else 4
    y = np.zeros((nc, n, nb))
    obs = np.zeros((obs_steps.size, 4, n, nb))
    alive = np.ones(nb, dtype=np.bool_)
    fail_step = np.full(nb, -1, dtype=np.int64)
    maxabs2 = np.zeros(nb)
    kernel = _kernels.integrate_rk4 if scheme == "rk4" else _kernels.integrate_euler
    a = _kernel_args(model, scheme)
    k0, k1 = seed_key(master_seed)
    lo, hi = lane_counters(idx)
    kernel(
        y, k0, k1, lo, hi, grid.n_steps, grid.dt, a["pump0"], a["slope"], a["damping"], a["kappa"],
        a["gamma_p"], a["zeta"], a["fb_scale"], a["linear"], a["indptr"], a["indices"], a["values"],
        obs_steps, obs, alive, fail_step, maxabs2,
    )
    return BatchResult(
        trajectory_indices=idx,
        final=np.moveaxis(y, -1, 0).copy(),
        obs=np.moveaxis(obs, -1, 0).copy(),
        alive=alive,
        fail_step=fail_step,
        max_abs=np.sqrt(maxabs2),
    )


def integrate_trajectory(
    model: CIMModel,
    grid: TimeGrid,
    stream: NoiseStream,
    observation_steps=None,
    scheme: str | None = None,
) -> TrajectoryResult:
    """Integrate one trajectory; raises :class:`NumericalFailure` if it diverges."""
    if stream.step != 0:
        raise InvalidArgument("trajectories start from step 0 of their stream")
    if observation_steps is None:
        observation_steps = grid.observation_steps()
    r = integrate_batch(model, grid, stream.master_seed, [stream.trajectory_index], observation_steps, scheme)
    if not r.alive[0]:
        raise NumericalFailure(
            f"trajectory {stream.trajectory_index} diverged at step {r.fail_step[0]}",
            trajectory_index=stream.trajectory_index,
            step=int(r.fail_step[0]),
        )
    f = r.final[0]
    sig = (f[0] + 1j * f[1], f[2] + 1j * f[3])
    pump = (f[4] + 1j * f[5], f[6] + 1j * f[7]) if model.has_pump else (None, None)
    return TrajectoryResult(
        final_state=PhaseState(*sig, *pump),
        times=grid.times(observation_steps),
        x=r.obs_x[0],
        photon_number=r.obs_photon_number[0],
        max_abs=float(r.max_abs[0]),
    )
