"""Swing-equation dynamics for small multi-machine systems.

Generators occupy the first ``n_gen`` buses. Any further bus is an infinite
bus whose angle is pinned at zero (the single-machine preset uses one).
Electrical power follows the classical-model power-flow expression with the
bus angle of a generator identified with its rotor angle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad

__all__ = [
    "BusSystem",
    "GenState",
    "NoEquilibriumError",
    "UnknownPresetError",
    "PRESETS",
    "preset_system",
    "injected_power",
    "electrical_power",
    "swing_rhs",
    "equilibrium",
]


class NoEquilibriumError(ValueError):
    """Raised when no steady state exists or Newton's method fails."""


class UnknownPresetError(KeyError):
    pass


def _frozen(a, ndim: int) -> np.ndarray:
    arr = np.array(a, dtype=float, ndmin=ndim)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class BusSystem:
    """Physical description of a network of swing-equation generators.

    ``input_kind`` says what the domain coordinate P controls:

    * ``"mechanical"``: mechanical power of generator 1 (all others 0).
    * ``"load"``: the load at bus ``input_bus``, with the mechanical powers of
      all generators set to an equal share of it.
    """

    name: str
    n_gen: int
    inertia: np.ndarray
    inertia_known: tuple
    damping: np.ndarray
    susceptance: np.ndarray
    line_angle: np.ndarray
    voltage: np.ndarray
    load: np.ndarray
    input_kind: str = "mechanical"
    input_bus: int = 0
    t_span: tuple = (0.0, 1.0)
    p_range: tuple = (0.0, 1.0)

    def __post_init__(self):
        for name, ndim in (("inertia", 1), ("damping", 1), ("voltage", 1), ("load", 1),
                           ("susceptance", 2), ("line_angle", 2)):
            object.__setattr__(self, name, _frozen(getattr(self, name), ndim))
        object.__setattr__(self, "inertia_known", tuple(bool(k) for k in self.inertia_known))
        object.__setattr__(self, "t_span", tuple(float(x) for x in self.t_span))
        object.__setattr__(self, "p_range", tuple(float(x) for x in self.p_range))

        n, nb = self.n_gen, self.n_bus
        if n < 1 or nb < n:
            raise ValueError("need at least one generator and n_bus >= n_gen")
        if self.inertia.shape != (n,) or self.damping.shape != (n,) or len(self.inertia_known) != n:
            raise ValueError("per-generator arrays must have length n_gen")
        if self.susceptance.shape != (nb, nb) or self.line_angle.shape != (nb, nb):
            raise ValueError("susceptance and line_angle must be n_bus x n_bus")
        if self.load.shape != (nb,):
            raise ValueError("load must have one entry per bus")
        if np.any(self.inertia <= 0) or np.any(self.damping < 0):
            raise ValueError("inertia must be > 0 and damping >= 0")
        if not np.allclose(self.susceptance, self.susceptance.T, rtol=0, atol=0):
            raise ValueError("susceptance matrix must be symmetric")
        if self.input_kind not in ("mechanical", "load"):
            raise ValueError(f"unknown input_kind {self.input_kind!r}")
        lo, hi = self.p_range
        if not lo < hi:
            raise ValueError("p_range must satisfy lo < hi")
        if self.t_span[0] != 0.0 or not self.t_span[1] > 0.0:
            raise ValueError("t_span must be [0, T] with T > 0")

    @property
    def n_bus(self) -> int:
        return int(self.voltage.shape[0])

    @property
    def horizon(self) -> float:
        return self.t_span[1]

    @property
    def unknown_inertia(self) -> list[int]:
        return [i for i, known in enumerate(self.inertia_known) if not known]

    def mechanical_power(self, p):
        """Per-generator mechanical input for domain coordinate ``p``."""
        if self.input_kind == "mechanical":
            return [p] + [0.0 * p] * (self.n_gen - 1)
        share = p / self.n_gen
        return [share] * self.n_gen

    def bus_load(self, p, i: int):
        if self.input_kind == "load" and i == self.input_bus:
            return self.load[i] + p
        return self.load[i]

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "n_gen": self.n_gen,
            "inertia": self.inertia.tolist(),
            "inertia_known": list(self.inertia_known),
            "damping": self.damping.tolist(),
            "susceptance": self.susceptance.tolist(),
            "line_angle": self.line_angle.tolist(),
            "voltage": self.voltage.tolist(),
            "load": self.load.tolist(),
            "input_kind": self.input_kind,
            "input_bus": self.input_bus,
            "t_span": list(self.t_span),
            "p_range": list(self.p_range),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BusSystem":
        return cls(**d)


@dataclass(frozen=True)
class GenState:
    delta: np.ndarray
    omega: np.ndarray = field(default=None)

    def __post_init__(self):
        delta = np.asarray(self.delta, dtype=float)
        omega = np.zeros_like(delta) if self.omega is None else np.asarray(self.omega, dtype=float)
        if delta.shape != omega.shape:
            raise ValueError("delta and omega must have equal length")
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "omega", omega)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.delta, self.omega])

    @classmethod
    def from_vector(cls, y) -> "GenState":
        y = np.asarray(y, dtype=float)
        n = y.shape[0] // 2
        return cls(y[:n], y[n:])


def injected_power(system: BusSystem, angles: Sequence, i: int, p=0.0):
    """Electrical power leaving generator ``i``.

    ``angles`` holds one entry per generator; entries may be floats, arrays or
    tape variables, so the same expression serves the simulator and the
    physics residual.
    """
    b, theta, v = system.susceptance, system.line_angle, system.voltage
    total = system.bus_load(p, i)
    for n in range(system.n_bus):
        if b[i, n] == 0.0:
            continue
        other = angles[n] if n < system.n_gen else 0.0
        phase = ad.sub(ad.sub(angles[i], other), theta[i, n])
        total = ad.add(ad.scale(ad.cos(phase), v[i] * b[i, n] * v[n]), total)
    return total


def electrical_power(system: BusSystem, delta, p=0.0) -> np.ndarray:
    delta = np.asarray(delta, dtype=float)
    if delta.shape != (system.n_gen,):
        raise ValueError(f"expected {system.n_gen} rotor angles, got shape {delta.shape}")
    return np.array([injected_power(system, delta, i, p) for i in range(system.n_gen)], dtype=float)


def swing_rhs(system: BusSystem, state: GenState, p_input: float) -> GenState:
    """Time derivative of the generator state: (omega, acceleration)."""
    delta, omega = state.delta, state.omega
    if delta.shape != (system.n_gen,):
        raise ValueError(f"expected {system.n_gen} rotor angles, got shape {delta.shape}")
    if not (np.all(np.isfinite(delta)) and np.all(np.isfinite(omega))):
        raise ValueError("non-finite state")
    pm = np.array(system.mechanical_power(p_input), dtype=float)
    pe = electrical_power(system, delta, p_input)
    accel = (pm - pe - system.damping * omega) / system.inertia
    return GenState(omega.copy(), accel)


def vector_field(system: BusSystem, p_input: float):
    """``f(t, y)`` on the stacked state vector, for the ODE solver."""
    n = system.n_gen
    pm = np.array(system.mechanical_power(p_input), dtype=float)

    def f(t, y):
        delta, omega = y[:n], y[n:]
        pe = np.array([injected_power(system, delta, i, p_input) for i in range(n)])
        return np.concatenate([omega, (pm - pe - system.damping * omega) / system.inertia])

    return f


def _mismatch_jacobian(system: BusSystem, delta: np.ndarray, p) -> np.ndarray:
    n = system.n_gen
    b, theta, v = system.susceptance, system.line_angle, system.voltage
    jac = np.zeros((n, n))
    for i in range(n):
        for k in range(system.n_bus):
            if b[i, k] == 0.0:
                continue
            other = delta[k] if k < n else 0.0
            dp = -v[i] * b[i, k] * v[k] * math.sin(delta[i] - other - theta[i, k])
            jac[i, i] += dp
            if k < n:
                jac[i, k] -= dp
    return jac


def equilibrium(system: BusSystem, p_input: float, tol: float = 1e-12,
                max_iter: int = 100) -> np.ndarray:
    """Rotor angles at which electrical and mechanical power balance.

    Damped Newton from the flat start. Without an infinite bus the angles are
    only defined up to a common shift, so generator 1 is pinned at zero and
    its balance equation is checked after convergence.
    """
    n = system.n_gen
    pm = np.array(system.mechanical_power(p_input), dtype=float)
    if system.n_bus == n == 1:
        raise NoEquilibriumError("an isolated machine has no electrical coupling")
    pinned = system.n_bus == n
    free = list(range(1, n)) if pinned else list(range(n))

    if system.n_bus == 2 and n == 1:
        # single machine against an infinite bus: principal branch check
        amp = system.voltage[0] * system.susceptance[0, 1] * system.voltage[1]
        if abs(pm[0] - system.load[0]) > abs(amp):
            raise NoEquilibriumError(
                f"input power {pm[0]:g} exceeds transfer limit {abs(amp):g}")

    delta = np.zeros(n)

    def mismatch(d):
        return electrical_power(system, d, p_input) - pm

    res = mismatch(delta)
    for _ in range(max_iter):
        if np.max(np.abs(res)) <= tol:
            break
        jac = _mismatch_jacobian(system, delta, p_input)[np.ix_(free, free)]
        try:
            step = np.linalg.solve(jac, -res[free])
        except np.linalg.LinAlgError as exc:
            raise NoEquilibriumError("singular power-flow Jacobian") from exc
        lam, norm0 = 1.0, np.linalg.norm(res[free])
        while lam > 1e-4:
            trial = delta.copy()
            trial[free] += lam * step
            trial_res = mismatch(trial)
            if np.linalg.norm(trial_res[free]) < norm0 or lam <= 1e-4:
                break
            lam *= 0.5
        delta, res = trial, trial_res
    if not np.max(np.abs(res)) <= 1e-10:
        raise NoEquilibriumError(
            f"no power balance reached (residual {np.max(np.abs(res)):.3e})")
    return delta


def _smib() -> BusSystem:
    half_pi = math.pi / 2
    return BusSystem(
        name="1bus",
        n_gen=1,
        inertia=[0.4],
        inertia_known=[False],
        damping=[0.25],
        susceptance=[[0.0, 0.2], [0.2, 0.0]],
        line_angle=[[0.0, half_pi], [half_pi, 0.0]],
        voltage=[1.0, 1.0],
        load=[0.0, 0.0],
        input_kind="mechanical",
        t_span=(0.0, 20.0),
        p_range=(0.08, 0.18),
    )


def _two_machine() -> BusSystem:
    half_pi = math.pi / 2
    return BusSystem(
        name="2bus",
        n_gen=2,
        inertia=[0.4, 0.132629],
        inertia_known=[True, False],
        damping=[0.05, 0.05],
        susceptance=[[0.0, 0.2], [0.2, 0.0]],
        line_angle=[[0.0, half_pi], [half_pi, 0.0]],
        voltage=[1.0, 1.0],
        load=[0.0, 0.0],
        input_kind="load",
        input_bus=1,
        t_span=(0.0, 1.0),
        p_range=(0.51, 1.51),
    )


PRESETS = {"1bus": _smib, "2bus": _two_machine}


def preset_system(name: str) -> BusSystem:
    try:
        return PRESETS[name]()
    except KeyError:
        raise UnknownPresetError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
