"""Reproducible per-trajectory Gaussian noise.

Noise values are a pure function of ``(master_seed, trajectory_index, step,
component)``. A Philox4x32-10 block keyed by the 64-bit master seed is
evaluated at counter ``(pair, step, traj_lo, traj_hi)`` and turned into two
standard normals by Box-Muller; component ``c`` of a step takes pair
``c // 2`` (cosine branch for even ``c``, sine branch for odd ``c``).

Components of one step are ordered ``(xi_alpha[0:N], xi_beta[0:N], xi_meas[0:N])``.
The integration kernels call the same generator, so nothing here depends on
batching, thread count or scheduling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import InvalidArgument
from .model import StepNoises

MAX_STEPS = 1 << 32
_MASK32 = (1 << 32) - 1
_MASK64 = (1 << 64) - 1


def seed_key(master_seed: int) -> tuple[np.uint64, np.uint64]:
    s = int(master_seed) & _MASK64
    return np.uint64(s & _MASK32), np.uint64(s >> 32)


def lane_counters(trajectory_indices) -> tuple[np.ndarray, np.ndarray]:
    idx = np.asarray([int(i) & _MASK64 for i in trajectory_indices], dtype=np.uint64)
    return idx & np.uint64(_MASK32), idx >> np.uint64(32)


@dataclass(frozen=True)
class NoiseStream:
    master_seed: int
    trajectory_index: int
    step: int = 0

    def __post_init__(self):
        if self.trajectory_index < 0 or not 0 <= self.step < MAX_STEPS:
            raise InvalidArgument("trajectory index must be >= 0 and step within [0, 2**32)")

    def advanced(self, n: int = 1) -> NoiseStream:
        return NoiseStream(self.master_seed, self.trajectory_index, self.step + n)


def standard_normals(master_seed: int, trajectory_indices, step: int, n_components: int) -> np.ndarray:
    """Unscaled normals of one step, shape ``(n_components, len(trajectory_indices))``."""
    if not 0 <= step < MAX_STEPS:
        raise InvalidArgument(f"step {step} outside [0, 2**32)")
    k0, k1 = seed_key(master_seed)
    lo, hi = lane_counters(trajectory_indices)
    out = np.empty((n_components, lo.size))
    _kernels.gaussian_step(k0, k1, step, lo, hi, out)
    return out


def draw_step_noises(stream: NoiseStream, n_nodes: int, dt: float) -> StepNoises:
    """Noises of step ``stream.step`` scaled to white-noise values ``z/sqrt(dt)``."""
    if not dt > 0:
        raise InvalidArgument(f"dt must be positive, got {dt}")
    z = standard_normals(stream.master_seed, [stream.trajectory_index], stream.step, 3 * n_nodes)[:, 0]
    z = z / math.sqrt(dt)
    return StepNoises(z[:n_nodes], z[n_nodes : 2 * n_nodes], z[2 * n_nodes :])
