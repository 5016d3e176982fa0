"""Closed-form and linear-algebra references for validating the simulator.

The linear test mode holds the effective nonlinearity at its vacuum value
``chi0`` and keeps the feedback, so in the real sector

    d(Re a, Re b) = A (Re a, Re b) dt + B dW

with ``dW`` stacking the ``alpha``, ``beta`` and measurement Wiener increments.
Its stationary covariance solves ``A C + C A^T + B B^T = 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import CapacityExceeded, InvalidArgument
from .ising import CouplingMatrix
from .model import DOPOParams, effective_nonlinearity, reduced_damping, threshold_pump

# Largest state dimension solved through the dense Kronecker system.
KRONECKER_MAX_DIM = 64


@dataclass(frozen=True)
class LinearModelSpec:
    A: np.ndarray  # (2N, 2N) drift on (Re alpha, Re beta)
    B: np.ndarray  # (2N, 3N) noise; columns xi_alpha, xi_beta, xi_meas
    chi0: float
    eps_p: float

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    def is_hurwitz(self) -> bool:
        return bool(np.max(np.linalg.eigvals(self.A).real) < 0)


def build_linear_model(J: CouplingMatrix, params: DOPOParams, eps_p_fixed: float) -> LinearModelSpec:
    """Drift and noise matrices of the linear test mode at a fixed pump."""
    eps_th = threshold_pump(params) if params.kappa > 0 else math.inf
    if not 0 <= eps_p_fixed < eps_th:
        raise InvalidArgument(f"pump {eps_p_fixed} must lie in [0, threshold {eps_th})")
    n = J.n
    chi0 = float(effective_nonlinearity(0.0, eps_p_fixed, params).real)
    g = reduced_damping(params)
    eye = np.eye(n)
    fb = params.zeta * J.weights
    A = np.block([[-g * eye + fb, chi0 * eye + fb], [chi0 * eye + fb, -g * eye + fb]])
    meas = fb * params.measurement_noise_scale if params.zeta else np.zeros((n, n))
    root = math.sqrt(chi0) * eye
    zero = np.zeros((n, n))
    B = np.block([[root, zero, meas], [zero, root, meas]])
    return LinearModelSpec(A=A, B=B, chi0=chi0, eps_p=float(eps_p_fixed))


def _check_hurwitz(A):
    top = np.max(np.linalg.eigvals(A).real)
    if not top < 0:
        raise InvalidArgument(f"drift matrix is not Hurwitz (largest eigenvalue real part {top:.6g})")


def lyapunov_kronecker(A: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Solve ``A C + C A^T + Q = 0`` as one dense linear system in ``vec(C)``."""
    d = A.shape[0]
    if d > KRONECKER_MAX_DIM:
        raise CapacityExceeded(f"Kronecker solve limited to dimension {KRONECKER_MAX_DIM}, got {d}")
    eye = np.eye(d)
    # row-major vec: vec(A C) = (A kron I) vec(C), vec(C A^T) = (I kron A) vec(C)
    K = np.kron(A, eye) + np.kron(eye, A)
    C = np.linalg.solve(K, -Q.reshape(-1)).reshape(d, d)
    return 0.5 * (C + C.T)


def stationary_covariance(spec: LinearModelSpec) -> np.ndarray:
    """Stationary covariance of ``(Re alpha, Re beta)`` in the linear test mode."""
    _check_hurwitz(spec.A)
    return lyapunov_kronecker(spec.A, spec.B @ spec.B.T)


def lyapunov_residual(spec: LinearModelSpec, C: np.ndarray) -> float:
    """``max|A C + C A^T + B B^T|`` relative to ``max|B B^T|``."""
    Q = spec.B @ spec.B.T
    r = np.max(np.abs(spec.A @ C + C @ spec.A.T + Q))
    scale = np.max(np.abs(Q))
    return float(r / scale) if scale > 0 else float(r)


def ou_mean_decay(gamma_eff, x0, t):
    """Noise-free linear decay ``x0 * exp(-gamma_eff * t)``."""
    return np.exp(-np.asarray(gamma_eff) * np.asarray(t)) * x0
