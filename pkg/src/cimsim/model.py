"""Positive-P equations of motion for the measurement-feedback DOPO network.

Three variants share one parameter set:

``full-ito``
    signal and pump amplitudes, Ito calculus, noise ``sqrt(kappa*alpha_p)``.
``adiabatic-strat``
    pump adiabatically eliminated; Stratonovich form with reduced damping
    ``gamma' = gamma - kappa**2/(4 gamma_p)`` and effective nonlinearity
    ``chi(a) = kappa*(eps_p - kappa*a**2/2)/gamma_p``.
``linear``
    ``chi`` frozen at ``chi(0)``, so every noise is additive. Used to check the
    integrators against a Lyapunov solution.

The functions here are plain numpy and serve as the readable reference; the
ensemble path runs compiled kernels that implement the same equations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidArgument, NumericalFailure
from .ising import CouplingMatrix

VARIANTS = ("full-ito", "adiabatic-strat", "linear")


@dataclass(frozen=True)
class DOPOParams:
    """Physical rates of one DOPO and the feedback loop.

    ``gamma`` is the total signal decay rate (measurement loss included) and is
    stored directly; ``gamma_m`` only sets the measurement-noise amplitude.
    Defaults are the two-node demonstration values.
    """

    gamma: float = 1.1
    gamma_p: float = 100.0
    gamma_m: float = 0.1
    kappa: float = 0.316227
    zeta: float = 0.3

    def __post_init__(self):
        for name in ("gamma", "gamma_p", "gamma_m", "kappa"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise InvalidArgument(f"{name} must be a finite non-negative rate, got {v}")
        if not math.isfinite(self.zeta):
            raise InvalidArgument(f"zeta must be finite, got {self.zeta}")
        if self.gamma_p <= 0:
            raise InvalidArgument("gamma_p must be positive")
        if self.zeta != 0 and self.gamma_m <= 0:
            raise InvalidArgument("gamma_m must be positive when feedback is on")
        if self.gamma_m > self.gamma:
            raise InvalidArgument("gamma_m cannot exceed the total decay rate gamma")

    @property
    def gamma_s(self) -> float:
        """Unmonitored part of the signal decay."""
        return self.gamma - self.gamma_m

    @property
    def measurement_noise_scale(self) -> float:
        return 1.0 / math.sqrt(2.0 * self.gamma_m) if self.gamma_m > 0 else 0.0

    def with_zeta(self, zeta: float) -> DOPOParams:
        return replace(self, zeta=zeta)


def threshold_pump(p: DOPOParams) -> float:
    """Pump amplitude at which parametric gain equals loss."""
    if p.kappa == 0:
        raise InvalidArgument("threshold undefined for kappa = 0")
    return p.gamma * p.gamma_p / p.kappa


def reduced_damping(p: DOPOParams) -> float:
    return p.gamma - p.kappa**2 / (4.0 * p.gamma_p)


@dataclass(frozen=True)
class PumpSchedule:
    """Linear ramp from zero to ``eps_final_ratio`` times threshold over ``t_max``."""

    t_max: float
    eps_final_ratio: float = 2.0

    def __post_init__(self):
        if not (self.t_max > 0 and math.isfinite(self.t_max)):
            raise InvalidArgument(f"t_max must be positive, got {self.t_max}")
        if not (self.eps_final_ratio >= 0 and math.isfinite(self.eps_final_ratio)):
            raise InvalidArgument(f"eps_final_ratio must be >= 0, got {self.eps_final_ratio}")

    def coefficients(self, p: DOPOParams) -> tuple[float, float]:
        """``(offset, slope)`` with ``eps_p(t) = offset + slope*t``."""
        eps_th = threshold_pump(p) if p.kappa > 0 else 0.0
        return 0.0, self.eps_final_ratio * eps_th / self.t_max


@dataclass(frozen=True)
class ConstantPump:
    """Pump held at ``ratio`` times threshold for ``t_max``; used by the linear checks."""

    t_max: float
    ratio: float

    def __post_init__(self):
        if not (self.t_max > 0 and math.isfinite(self.t_max)):
            raise InvalidArgument(f"t_max must be positive, got {self.t_max}")
        if not (self.ratio >= 0 and math.isfinite(self.ratio)):
            raise InvalidArgument(f"ratio must be >= 0, got {self.ratio}")

    def coefficients(self, p: DOPOParams) -> tuple[float, float]:
        eps_th = threshold_pump(p) if p.kappa > 0 else 0.0
        return self.ratio * eps_th, 0.0


def pump_at(s, p: DOPOParams, t: float) -> float:
    if not (0.0 <= t <= s.t_max):
        raise InvalidArgument(f"t={t} outside the schedule [0, {s.t_max}]")
    offset, slope = s.coefficients(p)
    return offset + slope * t


def effective_nonlinearity(alpha, eps_p: float, p: DOPOParams):
    """``chi(alpha)``: gain seen by the signal after eliminating the pump."""
    return p.kappa * (eps_p - 0.5 * p.kappa * np.square(alpha)) / p.gamma_p


def principal_sqrt(z):
    """Complex square root on the principal branch (non-negative real part).

    Signed zeros are cleared first, so the negative real axis always maps to
    ``+i sqrt|z|``.
    """
    return np.sqrt(np.asarray(z, dtype=np.complex128) + 0.0)


@dataclass
class PhaseState:
    """Doubled phase-space amplitudes of every node.

    ``alpha_p``/``beta_p`` are present only for the full-Ito variant.
    """

    alpha: np.ndarray
    beta: np.ndarray
    alpha_p: np.ndarray | None = None
    beta_p: np.ndarray | None = None

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=np.complex128)
        self.beta = np.asarray(self.beta, dtype=np.complex128)
        if self.alpha.shape != self.beta.shape:
            raise InvalidArgument("alpha and beta must have the same shape")
        if (self.alpha_p is None) != (self.beta_p is None):
            raise InvalidArgument("pump amplitudes must be given together")
        if self.alpha_p is not None:
            self.alpha_p = np.asarray(self.alpha_p, dtype=np.complex128)
            self.beta_p = np.asarray(self.beta_p, dtype=np.complex128)
            if self.alpha_p.shape != self.alpha.shape or self.beta_p.shape != self.alpha.shape:
                raise InvalidArgument("pump amplitudes must match the signal shape")

    @classmethod
    def vacuum(cls, n: int, with_pump: bool = False) -> PhaseState:
        z = np.zeros(n, dtype=np.complex128)
        if with_pump:
            return cls(z, z.copy(), z.copy(), z.copy())
        return cls(z, z.copy())

    @property
    def n(self) -> int:
        return self.alpha.shape[-1]

    @property
    def has_pump(self) -> bool:
        return self.alpha_p is not None

    @property
    def x(self) -> np.ndarray:
        """In-phase quadrature ``alpha + beta``."""
        return self.alpha + self.beta

    @property
    def photon_number(self) -> np.ndarray:
        return self.beta * self.alpha

    def to_vector(self) -> np.ndarray:
        parts = [self.alpha, self.beta]
        if self.has_pump:
            parts += [self.alpha_p, self.beta_p]
        return np.concatenate(parts, axis=-1)

    @classmethod
    def from_vector(cls, v, with_pump: bool) -> PhaseState:
        v = np.asarray(v, dtype=np.complex128)
        parts = np.split(v, 4 if with_pump else 2, axis=-1)
        return cls(*parts)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.to_vector())))


@dataclass
class StepNoises:
    """Per-step white-noise values, already scaled by ``1/sqrt(dt)``.

    One measurement value per source node ``j`` feeds every target row.
    """

    xi_alpha: np.ndarray
    xi_beta: np.ndarray
    xi_meas: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> StepNoises:
        return cls(np.zeros(n), np.zeros(n), np.zeros(n))


def _check_dims(J: CouplingMatrix, st: PhaseState):
    if st.n != J.n:
        raise InvalidArgument(f"state has {st.n} nodes but coupling matrix has {J.n}")


def _check_finite(st: PhaseState):
    if not st.is_finite():
        raise NumericalFailure("non-finite phase-space state")


def feedback_drive(J: CouplingMatrix, st: PhaseState, noises: StepNoises | None, p: DOPOParams):
    """Injected field ``eps_i = zeta * sum_j J_ij (x_j + xi_j / sqrt(2 gamma_m))``.

    With ``noises=None`` only the coherent part is returned.
    """
    _check_dims(J, st)
    if p.zeta == 0:
        return np.zeros(st.alpha.shape, dtype=np.complex128)
    drive = st.x
    if noises is not None:
        drive = drive + p.measurement_noise_scale * np.asarray(noises.xi_meas)
    return p.zeta * (drive @ J.weights.T)


def drift_full_ito(J: CouplingMatrix, st: PhaseState, t: float, sched, p: DOPOParams) -> PhaseState:
    if not st.has_pump:
        raise InvalidArgument("full-Ito drift needs pump amplitudes")
    _check_finite(st)
    eps = feedback_drive(J, st, None, p)
    eps_p = pump_at(sched, p, t)
    k = p.kappa
    return PhaseState(
        eps - p.gamma * st.alpha + k * st.beta * st.alpha_p,
        eps - p.gamma * st.beta + k * st.alpha * st.beta_p,
        eps_p - p.gamma_p * st.alpha_p - 0.5 * k * st.alpha**2,
        eps_p - p.gamma_p * st.beta_p - 0.5 * k * st.beta**2,
    )


def diffusion_full_ito(st: PhaseState, p: DOPOParams):
    """Amplitudes multiplying ``xi_alpha`` and ``xi_beta`` in the full model."""
    if not st.has_pump:
        raise InvalidArgument("full-Ito diffusion needs pump amplitudes")
    _check_finite(st)
    return principal_sqrt(p.kappa * st.alpha_p), principal_sqrt(p.kappa * st.beta_p)


def _chi(a, eps_p, p, linear):
    if linear:
        return np.full(np.shape(a), p.kappa * eps_p / p.gamma_p, dtype=np.complex128)
    return effective_nonlinearity(a, eps_p, p)


def drift_strat_adiabatic(
    J: CouplingMatrix, st: PhaseState, t: float, sched, p: DOPOParams, *, linear: bool = False, ito: bool = False
) -> PhaseState:
    """Signal-only drift after adiabatic pump elimination.

    ``ito=True`` returns the Ito form (damping ``gamma`` instead of ``gamma'``)
    for use with Euler-Maruyama; the linear mode has additive noise, so both
    forms coincide there and always use ``gamma'``.
    """
    if st.has_pump:
        raise InvalidArgument("adiabatic drift takes a signal-only state")
    _check_finite(st)
    eps = feedback_drive(J, st, None, p)
    eps_p = pump_at(sched, p, t)
    g = p.gamma if (ito and not linear) else reduced_damping(p)
    return PhaseState(
        eps - g * st.alpha + st.beta * _chi(st.alpha, eps_p, p, linear),
        eps - g * st.beta + st.alpha * _chi(st.beta, eps_p, p, linear),
    )


def diffusion_strat_adiabatic(st: PhaseState, t: float, sched, p: DOPOParams, *, linear: bool = False):
    if st.has_pump:
        raise InvalidArgument("adiabatic diffusion takes a signal-only state")
    _check_finite(st)
    eps_p = pump_at(sched, p, t)
    return principal_sqrt(_chi(st.alpha, eps_p, p, linear)), principal_sqrt(_chi(st.beta, eps_p, p, linear))


@dataclass(frozen=True)
class CIMModel:
    """One model variant bound to a problem, parameters and pump schedule."""

    J: CouplingMatrix
    params: DOPOParams
    schedule: object
    variant: str = "adiabatic-strat"
    _linear: bool = field(init=False, repr=False)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise InvalidArgument(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.variant != "full-ito" and reduced_damping(self.params) <= 0:
            raise InvalidArgument("reduced damping gamma' must be positive for the adiabatic model")
        object.__setattr__(self, "_linear", self.variant == "linear")

    @property
    def n(self) -> int:
        return self.J.n

    @property
    def has_pump(self) -> bool:
        return self.variant == "full-ito"

    def vacuum(self) -> PhaseState:
        return PhaseState.vacuum(self.n, with_pump=self.has_pump)

    def drift(self, st: PhaseState, t: float, ito: bool = False) -> PhaseState:
        if self.has_pump:
            return drift_full_ito(self.J, st, t, self.schedule, self.params)
        return drift_strat_adiabatic(self.J, st, t, self.schedule, self.params, linear=self._linear, ito=ito)

    def diffusion(self, st: PhaseState, t: float):
        if self.has_pump:
            return diffusion_full_ito(st, self.params)
        return diffusion_strat_adiabatic(st, t, self.schedule, self.params, linear=self._linear)

    def noise_term(self, st: PhaseState, t: float, noises: StepNoises) -> PhaseState:
        """Stochastic part of the right-hand side for the given step noises."""
        ga, gb = self.diffusion(st, t)
        p = self.params
        fb = np.zeros(st.alpha.shape, dtype=np.complex128)
        if p.zeta != 0:
            fb = fb + p.zeta * p.measurement_noise_scale * (np.asarray(noises.xi_meas) @ self.J.weights.T)
        da = fb + ga * noises.xi_alpha
        db = fb + gb * noises.xi_beta
        if self.has_pump:
            z = np.zeros_like(da)
            return PhaseState(da, db, z, z.copy())
        return PhaseState(da, db)

    def stiffness(self, st: PhaseState, t: float) -> float:
        """Upper bound on the Stratonovich drift Jacobian at ``st`` (0 for the full model).

        Per node it bounds ``|d(beta chi(alpha))|`` by ``2 c2 |alpha||beta| + |chi|``
        with ``c2 = kappa^2/(2 gamma_p)``, plus damping and the feedback row sums.
        """
        if self.has_pump:
            return 0.0
        p = self.params
        c1 = abs(p.kappa * pump_at(self.schedule, p, t) / p.gamma_p)
        c2 = 0.0 if self._linear else 0.5 * p.kappa**2 / p.gamma_p
        a2 = st.alpha.real**2 + st.alpha.imag**2
        b2 = st.beta.real**2 + st.beta.imag**2
        node = 2.0 * c2 * np.sqrt(a2 * b2) + c1 + c2 * np.maximum(a2, b2)
        fb = 2.0 * abs(p.zeta) * float(np.max(np.sum(np.abs(self.J.weights), axis=1)))
        return abs(reduced_damping(p)) + fb + float(np.max(node))

    def rhs(self, st: PhaseState, t: float, noises: StepNoises, ito: bool = False) -> PhaseState:
        d = self.drift(st, t, ito=ito).to_vector() + self.noise_term(st, t, noises).to_vector()
        return PhaseState.from_vector(d, self.has_pump)
