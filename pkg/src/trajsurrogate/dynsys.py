"""Parametric dynamical systems and the built-in voltage-doubler circuit.

A system is ``M(p) x'(t) = f(t, x, p)`` with a pointwise scalar quantity of
interest ``g(x)``.  A singular mass matrix makes the system a DAE; the built-in
circuit model is an index-1 DAE with two differential node voltages and one
algebraic one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import partial
from typing import Callable, Optional

import numpy as np

# exp arguments beyond this overflow float64; a Newton iterate that lands here
# is divergent and must be rejected, not propagated as inf
_EXP_ARG_MAX = math.log(np.finfo(np.float64).max)


class DiodeOverflowError(ArithmeticError):
    """Diode exponent exceeds the float64 overflow threshold."""


class DimensionMismatchError(ValueError):
    """State or parameter vector has the wrong length."""


@dataclass(frozen=True)
class ParameterVector:
    """Point in the four-dimensional parameter cuboid: two capacitances [F],
    two resistances [Ohm]."""

    c1: float
    c2: float
    r1: float
    r2: float

    def __post_init__(self) -> None:
        if not all(v > 0 for v in (self.c1, self.c2, self.r1, self.r2)):
            raise ValueError("all parameters must be strictly positive")

    def as_array(self) -> np.ndarray:
        return np.array([self.c1, self.c2, self.r1, self.r2], dtype=np.float64)

    @classmethod
    def from_array(cls, p: np.ndarray) -> "ParameterVector":
        p = np.asarray(p, dtype=np.float64)
        if p.shape != (4,):
            raise DimensionMismatchError(f"expected 4 parameters, got shape {p.shape}")
        return cls(*p)


@dataclass(frozen=True)
class ParameterDomain:
    """Componentwise bounds of the parameter cuboid."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self) -> None:
        lower = np.asarray(self.lower, dtype=np.float64)
        upper = np.asarray(self.upper, dtype=np.float64)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        if lower.shape != upper.shape or lower.ndim != 1:
            raise ValueError("lower and upper must be 1-d arrays of equal length")
        if not np.all(lower <= upper):
            raise ValueError("lower bound exceeds upper bound")

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def contains(self, p) -> bool:
        arr = p.as_array() if isinstance(p, ParameterVector) else np.asarray(p)
        return bool(np.all(arr >= self.lower) and np.all(arr <= self.upper))

    def midpoint(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)


def default_domain() -> ParameterDomain:
    """Capacitances in [2e-9, 3e-9] F, R1 in [1e6, 2e6] Ohm, R2 in [1e8, 2e8] Ohm."""
    return ParameterDomain(
        lower=np.array([2e-9, 2e-9, 1e6, 1e8]),
        upper=np.array([3e-9, 3e-9, 2e6, 2e8]),
    )


@dataclass(frozen=True)
class CircuitConstants:
    """Diode law coefficients and drive-voltage shape of the circuit model."""

    gamma: float = 4.067e-8
    delta: float = 5.634e-2
    amplitude: float = 500.0  # volts (node-voltage units)
    period: float = 0.1  # seconds

    def __post_init__(self) -> None:
        if self.gamma <= 0 or self.delta <= 0 or self.period <= 0:
            raise ValueError("gamma, delta and period must be positive")


@dataclass(frozen=True)
class SystemSpec:
    """Parametric system M(p) x' = f(t, x, p) with QoI g(x) and initial map.

    ``jac`` is the analytic state Jacobian df/dx; when absent, consumers fall
    back to :func:`finite_difference_jacobian`.  ``mass`` must be constant in
    time for a given parameter vector.
    """

    dim: int
    mass: Callable[[np.ndarray], np.ndarray]
    rhs: Callable[[float, np.ndarray, np.ndarray], np.ndarray]
    qoi: Callable[[np.ndarray], float]
    initial: Callable[[np.ndarray], np.ndarray]
    t0: float
    tf: float
    jac: Optional[Callable[[float, np.ndarray, np.ndarray], np.ndarray]] = None

    def state_jacobian(self, t: float, x: np.ndarray, p: np.ndarray) -> np.ndarray:
        if self.jac is not None:
            return self.jac(t, x, p)
        return finite_difference_jacobian(self.rhs, t, x, p)


def diode_current(u: float, constants: CircuitConstants = CircuitConstants()) -> float:
    """Diode current gamma*(exp(delta*u) - 1); strictly increasing in u."""
    arg = constants.delta * u
    if arg > _EXP_ARG_MAX:
        raise DiodeOverflowError(f"diode exponent {arg:.3g} overflows float64")
    return constants.gamma * (math.exp(arg) - 1.0)


def diode_conductance(u: float, constants: CircuitConstants = CircuitConstants()) -> float:
    """Derivative of the diode law: gamma*delta*exp(delta*u)."""
    arg = constants.delta * u
    if arg > _EXP_ARG_MAX:
        raise DiodeOverflowError(f"diode exponent {arg:.3g} overflows float64")
    return constants.gamma * constants.delta * math.exp(arg)


def input_voltage(t: float, constants: CircuitConstants = CircuitConstants()) -> float:
    """Harmonic drive A*sin(2*pi*t/T)."""
    return constants.amplitude * math.sin(2.0 * math.pi * t / constants.period)


def _circuit_mass(p: np.ndarray) -> np.ndarray:
    return np.diag([p[0], p[1], 0.0])


def _circuit_rhs(t: float, x: np.ndarray, p: np.ndarray, constants: CircuitConstants) -> np.ndarray:
    x1, x2, x3 = x[0], x[1], x[2]
    r1, r2 = p[2], p[3]
    i_top = diode_current(-(x1 + x3), constants)
    i_out = diode_current(x3, constants)
    drive = (x2 + x3 + input_voltage(t, constants)) / r1
    return np.array([-x1 / r2 + i_top, -drive, -drive + i_top - i_out])


def _circuit_jac(t: float, x: np.ndarray, p: np.ndarray, constants: CircuitConstants) -> np.ndarray:
    x1, x3 = x[0], x[2]
    r1, r2 = p[2], p[3]
    g_top = diode_conductance(-(x1 + x3), constants)
    g_out = diode_conductance(x3, constants)
    return np.array(
        [
            [-1.0 / r2 - g_top, 0.0, -g_top],
            [0.0, -1.0 / r1, -1.0 / r1],
            [-g_top, -1.0 / r1, -1.0 / r1 - g_top - g_out],
        ]
    )


def _circuit_initial(p: np.ndarray) -> np.ndarray:
    return np.zeros(3)


def _second_component(x: np.ndarray) -> float:
    return float(x[1])


def circuit_system(constants: CircuitConstants = CircuitConstants()) -> SystemSpec:
    """Voltage-doubler circuit: three node voltages, mass diag(C1, C2, 0).

    Row 3 is the algebraic current balance; the QoI is the second node
    voltage.  Zero initial values are consistent because the drive and both
    diode currents vanish at t = 0.
    """
    return SystemSpec(
        dim=3,
        mass=_circuit_mass,
        rhs=partial(_circuit_rhs, constants=constants),
        jac=partial(_circuit_jac, constants=constants),
        qoi=_second_component,
        initial=_circuit_initial,
        t0=0.0,
        tf=0.5,
    )


def evaluate_qoi(spec: SystemSpec, x: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (spec.dim,):
        raise DimensionMismatchError(f"state must have length {spec.dim}, got shape {x.shape}")
    return float(spec.qoi(x))


def finite_difference_jacobian(
    rhs: Callable[[float, np.ndarray, np.ndarray], np.ndarray],
    t: float,
    x: np.ndarray,
    p: np.ndarray,
    rel_step: float = 1e-6,
) -> np.ndarray:
    """Central-difference df/dx with step rel_step*max(1, |x_j|) per column."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    jac = np.empty((n, n))
    for j in range(n):
        h = rel_step * max(1.0, abs(x[j]))
        xp = x.copy()
        xm = x.copy()
        xp[j] += h
        xm[j] -= h
        jac[:, j] = (rhs(t, xp, p) - rhs(t, xm, p)) / (2.0 * h)
    return jac


def algebraic_rows(mass: np.ndarray, tol: float = 0.0) -> np.ndarray:
    """Indices of all-zero mass-matrix rows (the algebraic equations)."""
    return np.flatnonzero(np.all(np.abs(mass) <= tol, axis=1))
