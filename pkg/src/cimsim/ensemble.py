"""Subensemble Monte-Carlo statistics: success rates and moment observables.

Trajectory ``k`` belongs to subensemble ``k // n_per_sub``. Means are formed
per subensemble first; the reported error is the standard deviation of the
subensemble means divided by ``sqrt(n_sub)``.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import EnsembleInvalid, InvalidArgument
from .integrator import TimeGrid, integrate_batch
from .ising import CouplingMatrix, GroundStateSet, ising_energy, spins_from_state
from .model import VARIANTS, CIMModel, DOPOParams, PhaseState

MAX_DIVERGED_FRACTION = 0.01


@dataclass(frozen=True)
class EnsembleConfig:
    n_sub: int
    n_per_sub: int
    master_seed: int = 0
    variant: str = "adiabatic-strat"
    scheme: str | None = None
    observations: int = 101

    def __post_init__(self):
        if int(self.n_sub) != self.n_sub or self.n_sub < 2:
            raise InvalidArgument("n_sub must be an integer >= 2 to estimate a standard error")
        if int(self.n_per_sub) != self.n_per_sub or self.n_per_sub < 1:
            raise InvalidArgument("n_per_sub must be a positive integer")
        if self.variant not in VARIANTS:
            raise InvalidArgument(f"unknown variant {self.variant!r}")
        if self.master_seed < 0:
            raise InvalidArgument("master_seed must be non-negative")

    @property
    def n_trajectories(self) -> int:
        return self.n_sub * self.n_per_sub


@dataclass
class Moments:
    """Subensemble estimates; complex stderr fields hold ``stderr(Re) + 1j*stderr(Im)``."""

    x_mean: np.ndarray
    x_stderr: np.ndarray
    n_mean: np.ndarray
    n_stderr: np.ndarray


@dataclass
class EnsembleStats:
    success_rate_mean: float
    success_rate_stderr: float
    subensemble_rates: np.ndarray
    times: np.ndarray
    x_mean: np.ndarray  # (n_obs, N) complex
    x_stderr: np.ndarray
    n_mean: np.ndarray  # photon number <beta*alpha>
    n_stderr: np.ndarray
    n_trajectories: int
    n_diverged: int
    max_abs: float
    final_spins: np.ndarray = field(repr=False)
    success: np.ndarray = field(repr=False)
    alive: np.ndarray = field(repr=False)
    warnings: list = field(default_factory=list)


def _sub_mean_stderr(values, alive, n_sub):
    """Mean and stderr over subensembles of ``values`` shaped ``(n_traj, ...)``."""
    n_traj = values.shape[0]
    if n_traj < n_sub or n_traj % n_sub:
        raise InvalidArgument(f"{n_traj} trajectories cannot form {n_sub} equal subensembles")
    v = values.reshape(n_sub, n_traj // n_sub, *values.shape[1:])
    w = alive.reshape(n_sub, n_traj // n_sub, *([1] * (values.ndim - 1))).astype(np.float64)
    counts = w.sum(axis=1)
    if np.any(counts == 0):
        raise EnsembleInvalid("a subensemble has no surviving trajectories")
    sub = (v * w).sum(axis=1) / counts
    return sub.mean(axis=0), sub.std(axis=0, ddof=1) / np.sqrt(n_sub), sub


def _complex_stats(values, alive, n_sub):
    mr, sr, _ = _sub_mean_stderr(values.real, alive, n_sub)
    mi, si, _ = _sub_mean_stderr(values.imag, alive, n_sub)
    return mr + 1j * mi, sr + 1j * si


def moment_observables(x, photon_number, n_sub: int, alive=None) -> Moments:
    """Moments of recorded quadratures and photon numbers.

    ``x`` and ``photon_number`` are ``(n_traj, n_obs, N)`` complex arrays that
    share observation times.
    """
    x = np.asarray(x)
    photon_number = np.asarray(photon_number)
    if x.shape != photon_number.shape:
        raise InvalidArgument("x and photon_number must share a shape")
    if alive is None:
        alive = np.ones(x.shape[0], dtype=bool)
    xm, xs = _complex_stats(x, alive, n_sub)
    nm, ns = _complex_stats(photon_number, alive, n_sub)
    return Moments(xm, xs, nm, ns)


def _final_quadratures(final_states) -> np.ndarray:
    if isinstance(final_states, PhaseState):
        return np.atleast_2d(final_states.x)
    items = list(final_states) if not isinstance(final_states, np.ndarray) else final_states
    if len(items) == 0:
        raise InvalidArgument("no final states given")
    if isinstance(items[0], PhaseState):
        return np.stack([s.x for s in items])
    return np.atleast_2d(np.asarray(items))


def success_flags(final_states, J: CouplingMatrix, ground: GroundStateSet) -> np.ndarray:
    x = _final_quadratures(final_states)
    return np.asarray(ground.contains_energy(ising_energy(J, spins_from_state(x))), dtype=bool)


def success_rate(final_states, J: CouplingMatrix, ground: GroundStateSet) -> float:
    """Fraction of final states whose spin signs reach the ground-state energy."""
    flags = success_flags(final_states, J, ground)
    if flags.size == 0:
        raise InvalidArgument("no final states given")
    return float(flags.mean())


def _batches(cfg: EnsembleConfig, lanes: int):
    """Contiguous trajectory ranges that never straddle a subensemble."""
    out = []
    for s in range(cfg.n_sub):
        start = s * cfg.n_per_sub
        for b in range(start, start + cfg.n_per_sub, lanes):
            out.append(np.arange(b, min(b + lanes, start + cfg.n_per_sub)))
    return out


def default_lanes(n_nodes: int) -> int:
    return 256 if n_nodes <= 4 else 64


def run_ensemble(
    J: CouplingMatrix,
    params: DOPOParams,
    schedule,
    grid: TimeGrid,
    cfg: EnsembleConfig,
    ground: GroundStateSet,
    workers: int = 1,
    lanes: int | None = None,
) -> EnsembleStats:
    """Integrate ``n_sub * n_per_sub`` trajectories and aggregate them.

    Output bits do not depend on ``workers`` or ``lanes``: every trajectory's
    noise is addressed by its index and reductions run in index order.
    """
    if ground.configs.shape[1] != J.n:
        raise InvalidArgument("ground-state set does not match the coupling matrix")
    if workers < 1:
        raise InvalidArgument("workers must be >= 1")
    model = CIMModel(J, params, schedule, cfg.variant)
    obs_steps = grid.observation_steps(cfg.observations)
    batches = _batches(cfg, lanes or default_lanes(J.n))

    def work(idx):
        return integrate_batch(model, grid, cfg.master_seed, idx, obs_steps, cfg.scheme)

    if workers == 1:
        results = [work(b) for b in batches]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, batches))

    final_x = np.concatenate([r.final_x for r in results])
    obs_x = np.concatenate([r.obs_x for r in results])
    obs_n = np.concatenate([r.obs_photon_number for r in results])
    alive = np.concatenate([r.alive for r in results])
    max_abs = np.concatenate([r.max_abs for r in results])

    n_traj = cfg.n_trajectories
    n_div = int(n_traj - alive.sum())
    notes = []
    if n_div > MAX_DIVERGED_FRACTION * n_traj:
        raise EnsembleInvalid(f"{n_div} of {n_traj} trajectories diverged")
    if n_div:
        notes.append(f"{n_div} diverged trajectories excluded")
        warnings.warn(notes[-1], RuntimeWarning, stacklevel=2)

    spins = spins_from_state(np.where(alive[:, None], final_x, 0.0))
    success = np.asarray(ground.contains_energy(ising_energy(J, spins)), dtype=bool) & alive
    rate, rate_err, sub_rates = _sub_mean_stderr(success.astype(np.float64), alive, cfg.n_sub)
    mom = moment_observables(obs_x, obs_n, cfg.n_sub, alive)
    return EnsembleStats(
        success_rate_mean=float(rate),
        success_rate_stderr=float(rate_err),
        subensemble_rates=sub_rates,
        times=grid.times(obs_steps),
        x_mean=mom.x_mean,
        x_stderr=mom.x_stderr,
        n_mean=mom.n_mean,
        n_stderr=mom.n_stderr,
        n_trajectories=n_traj,
        n_diverged=n_div,
        max_abs=float(np.max(np.where(alive, max_abs, 0.0))),
        final_spins=spins,
        success=success,
        alive=alive,
        warnings=notes,
    )
