"""Ising problem instances, energies and exhaustive ground states.

Energies use the ordered-pair convention ``H = -sum_{i,j} J_ij s_i s_j``,
so every unordered edge is counted twice.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CapacityExceeded, InvalidArgument, IOFailure, NumericalFailure

MAX_BRUTEFORCE_NODES = 24
_ENERGY_RTOL = 1e-9


@dataclass(frozen=True, eq=False)
class CouplingMatrix:
    """Symmetric real N x N Ising weights."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1] or w.shape[0] < 1:
            raise InvalidArgument(f"coupling matrix must be square and non-empty, got shape {w.shape}")
        if not np.all(np.isfinite(w)):
            raise InvalidArgument("coupling matrix has non-finite entries")
        if not np.array_equal(w, w.T):
            raise InvalidArgument("coupling matrix must be symmetric")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    def __eq__(self, other):
        return isinstance(other, CouplingMatrix) and np.array_equal(self.weights, other.weights)

    def __hash__(self):
        return hash(self.weights.tobytes())

    def permuted(self, perm) -> CouplingMatrix:
        perm = np.asarray(perm)
        return CouplingMatrix(self.weights[np.ix_(perm, perm)])

    def to_sparse_rows(self):
        """CSR triple ``(indptr, indices, values)`` of the nonzero couplings."""
        indptr = [0]
        indices, values = [], []
        for i in range(self.n):
            (nz,) = np.nonzero(self.weights[i])
            indices.extend(nz.tolist())
            values.extend(self.weights[i, nz].tolist())
            indptr.append(len(indices))
        return (
            np.asarray(indptr, dtype=np.int64),
            np.asarray(indices, dtype=np.int64),
            np.asarray(values, dtype=np.float64),
        )


@dataclass(frozen=True, eq=False)
class GroundStateSet:
    energy: float
    configs: np.ndarray  # (k, N) int8 spins

    def __len__(self):
        return len(self.configs)

    def contains_energy(self, energy) -> np.ndarray | bool:
        tol = _ENERGY_RTOL * max(1.0, abs(self.energy))
        return np.abs(np.asarray(energy) - self.energy) <= tol


def pairwise_afm() -> CouplingMatrix:
    """Two antiferromagnetically coupled nodes, ``J_ij = delta_ij - 1``."""
    return CouplingMatrix(np.eye(2) - 1.0)


def ring_afm(n: int) -> CouplingMatrix:
    """Nearest-neighbour antiferromagnetic ring with periodic closure."""
    if int(n) != n or n < 3:
        raise InvalidArgument(f"ring needs n >= 3 nodes (use pairwise_afm for n=2), got {n}")
    n = int(n)
    w = np.zeros((n, n))
    idx = np.arange(n)
    w[idx, (idx + 1) % n] = -1.0
    w[(idx + 1) % n, idx] = -1.0
    return CouplingMatrix(w)


def _as_spins(s, n=None) -> np.ndarray:
    s = np.asarray(s)
    if s.ndim == 0 or (n is not None and s.shape[-1] != n):
        raise InvalidArgument(f"spin configuration of shape {s.shape} does not match {n} nodes")
    if not np.all((s == 1) | (s == -1)):
        raise InvalidArgument("spins must be +1 or -1")
    return s


def ising_energy(J: CouplingMatrix, s) -> float | np.ndarray:
    """Energy of one configuration, or of each row of a stack of configurations."""
    s = _as_spins(s, J.n).astype(np.float64)
    e = -np.einsum("...i,ij,...j->...", s, J.weights, s)
    return float(e) if e.ndim == 0 else e


def _enumerate(n, start, stop):
    codes = np.arange(start, stop, dtype=np.int64)
    bits = (codes[:, None] >> np.arange(n - 1, -1, -1)) & 1
    return (1 - 2 * bits).astype(np.int8)  # bit 0 -> +1


def ground_states_bruteforce(J: CouplingMatrix) -> GroundStateSet:
    """Enumerate all ``2**N`` configurations and keep the minimisers."""
    n = J.n
    if n > MAX_BRUTEFORCE_NODES:
        raise CapacityExceeded(f"brute force limited to {MAX_BRUTEFORCE_NODES} nodes, got {n}")
    total = 1 << n
    chunk = 1 << 16
    energies = np.empty(total)
    for start in range(0, total, chunk):
        stop = min(total, start + chunk)
        s = _enumerate(n, start, stop).astype(np.float64)
        energies[start:stop] = -np.einsum("ki,ij,kj->k", s, J.weights, s)
    e_min = float(energies.min())
    tol = _ENERGY_RTOL * max(1.0, abs(e_min))
    (hits,) = np.nonzero(energies - e_min <= tol)
    configs = np.concatenate([_enumerate(n, h, h + 1) for h in hits])
    return GroundStateSet(energy=e_min, configs=configs)


def ring_ground_states(n: int) -> GroundStateSet:
    """Closed-form ground set of an even AFM ring: the two alternating states at ``-2n``."""
    if int(n) != n or n < 4 or n % 2:
        raise InvalidArgument(f"closed form needs an even ring with n >= 4, got {n}")
    alt = np.where(np.arange(int(n)) % 2 == 0, 1, -1).astype(np.int8)
    return GroundStateSet(energy=-2.0 * n, configs=np.stack([alt, -alt]))


def ground_states_for(J: CouplingMatrix, problem: str | None = None) -> GroundStateSet:
    """Brute force where it fits; even rings beyond that use the closed form."""
    if J.n > MAX_BRUTEFORCE_NODES and problem is not None and problem.startswith("ring:") and J.n % 2 == 0:
        return ring_ground_states(J.n)
    return ground_states_bruteforce(J)


def spins_from_state(x) -> np.ndarray:
    """Spin signs of the in-phase quadratures; ``Re(x) == 0`` maps to +1."""
    x = np.asarray(x)
    re = np.real(x)
    if not np.all(np.isfinite(x)):
        raise NumericalFailure("non-finite quadrature while extracting spins")
    return np.where(re >= 0, 1, -1).astype(np.int8)


def load_coupling(path) -> CouplingMatrix:
    """Read ``{"n": int, "entries": [[i, j, value], ...]}`` (0-based, symmetrised)."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise IOFailure(f"cannot read coupling file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidArgument(f"{path}:{exc.lineno}: {exc.msg}") from exc
    return coupling_from_dict(doc)


def coupling_from_dict(doc) -> CouplingMatrix:
    try:
        n = doc["n"]
        entries = doc["entries"]
    except (KeyError, TypeError) as exc:
        raise InvalidArgument(f"coupling document needs 'n' and 'entries': {exc}") from exc
    if not isinstance(n, int) or n < 1:
        raise InvalidArgument(f"'n' must be a positive integer, got {n!r}")
    w = np.zeros((n, n))
    seen = np.zeros((n, n), dtype=bool)
    for k, entry in enumerate(entries):
        try:
            i, j, v = entry
        except (TypeError, ValueError) as exc:
            raise InvalidArgument(f"entries[{k}] must be [i, j, value]") from exc
        if not (isinstance(i, int) and isinstance(j, int) and 0 <= i < n and 0 <= j < n):
            raise InvalidArgument(f"entries[{k}] has index out of range for n={n}")
        v = float(v)
        for a, b in ((i, j), (j, i)):
            if seen[a, b] and w[a, b] != v:
                raise InvalidArgument(f"entries[{k}] conflicts with an earlier value for ({a}, {b})")
            w[a, b] = v
            seen[a, b] = True
    return CouplingMatrix(w)


def coupling_to_dict(J: CouplingMatrix) -> dict:
    i, j = np.nonzero(np.triu(J.weights))
    return {"n": J.n, "entries": [[int(a), int(b), float(J.weights[a, b])] for a, b in zip(i, j)]}


def save_coupling(J: CouplingMatrix, path) -> None:
    try:
        Path(path).write_text(json.dumps(coupling_to_dict(J)))
    except OSError as exc:
        raise IOFailure(f"cannot write coupling file {path}: {exc}") from exc
