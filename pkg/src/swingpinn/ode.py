"""Explicit Dormand-Prince 5(4) integration with dense output."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "SolverConfig",
    "Solution",
    "SolverError",
    "StepSizeUnderflow",
    "TooManySteps",
    "NonFiniteDerivative",
    "integrate_adaptive",
    "integrate_fixed",
    "sample_at",
]

# Butcher tableau
C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
A = np.array([
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1 / 5, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3 / 40, 9 / 40, 0.0, 0.0, 0.0, 0.0],
    [44 / 45, -56 / 15, 32 / 9, 0.0, 0.0, 0.0],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729, 0.0, 0.0],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656, 0.0],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
])
B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
E = B5 - B4

# Dense-output polynomial coefficients; y(t0 + s*h) = y0 + h * K.T @ (P @ [s, s^2, s^3, s^4])
P = np.array([
    [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

ORDER = 5
SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 5.0
# PI controller exponents (Hairer, Norsett & Wanner, II.4)
BETA = 0.04
ALPHA = 1.0 / ORDER - 0.75 * BETA


class SolverError(RuntimeError):
    pass


class StepSizeUnderflow(SolverError):
    pass


class TooManySteps(SolverError):
    pass


class NonFiniteDerivative(SolverError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    rtol: float = 1e-8
    atol: float = 1e-10
    h_init: float | None = None
    h_min: float = 1e-12
    h_max: float = np.inf
    max_steps: int = 1_000_000

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol > 0):
            raise ValueError("rtol and atol must be positive")
        if not 0 < self.h_min <= self.h_max:
            raise ValueError("need 0 < h_min <= h_max")
        if self.h_init is not None and self.h_init <= 0:
            raise ValueError("h_init must be positive")
        if self.max_steps <= 0:
            raise ValueError("max_steps must be positive")


@dataclass(frozen=True)
class Solution:
    """Accepted steps of an integration plus the stage slopes for dense output.

    ``stages[k]`` holds the seven slopes of the step from ``t[k]`` to ``t[k+1]``.
    """

    t: np.ndarray
    y: np.ndarray
    stages: np.ndarray
    n_rejected: int = 0

    @property
    def n_steps(self) -> int:
        return len(self.t) - 1


def _eval(rhs, t, y):
    f = np.asarray(rhs(t, y), dtype=float)
    if not np.all(np.isfinite(f)):
        raise NonFiniteDerivative(f"non-finite derivative at t={t!r}")
    return f


def _step(rhs, t, y, f0, h):
    k = np.empty((7, y.shape[0]))
    k[0] = f0
    for i in range(1, 7):
        k[i] = _eval(rhs, t + C[i] * h, y + h * (A[i, :i] @ k[:i]))
    y_new = y + h * (B5 @ k)
    return y_new, k


def _rms(x) -> float:
    # overflow just means "far too large", which the controller handles as a rejection
    with np.errstate(over="ignore"):
        return float(np.sqrt(np.mean(x ** 2)))


def _initial_step(rhs, t0, y0, f0, direction_span, cfg) -> float:
    scale = cfg.atol + np.abs(y0) * cfg.rtol
    d0 = _rms(y0 / scale)
    d1 = _rms(f0 / scale)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, direction_span)
    f1 = _eval(rhs, t0 + h0, y0 + h0 * f0)
    d2 = _rms((f1 - f0) / scale) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1.0 / ORDER)
    return min(100 * h0, h1, direction_span)


def integrate_adaptive(rhs: Callable, y0, t_span, cfg: SolverConfig | None = None) -> Solution:
    """Integrate ``y' = rhs(t, y)`` over ``t_span`` with error control.

    The local error estimate of every accepted step satisfies
    ``rms(err / (atol + rtol * max(|y_old|, |y_new|))) <= 1``.
    """
    cfg = cfg or SolverConfig()
    t0, t1 = float(t_span[0]), float(t_span[1])
    if not t1 > t0:
        raise ValueError("t_span must be increasing")
    y = np.array(y0, dtype=float, ndmin=1)
    if not np.all(np.isfinite(y)):
        raise ValueError("non-finite initial state")

    f = _eval(rhs, t0, y)
    h = cfg.h_init if cfg.h_init is not None else _initial_step(rhs, t0, y, f, t1 - t0, cfg)
    h = min(max(h, cfg.h_min), cfg.h_max)

    ts, ys, ks = [t0], [y.copy()], []
    t, err_prev, rejected, last_rejected = t0, 1e-4, 0, False
    while t < t1:
        if len(ks) + rejected >= cfg.max_steps:
            raise TooManySteps(f"exceeded {cfg.max_steps} steps at t={t!r}")
        if h < cfg.h_min:
            raise StepSizeUnderflow(f"step size {h:.3e} below h_min at t={t!r}")
        final = t + h >= t1
        if final:
            h = t1 - t
        y_new, k = _step(rhs, t, y, f, h)
        k[6] = _eval(rhs, t + h, y_new)
        scale = cfg.atol + cfg.rtol * np.maximum(np.abs(y), np.abs(y_new))
        err = _rms(h * (E @ k) / scale)

        if err <= 1.0:
            t = t1 if final else t + h
            y, f = y_new, k[6]
            ts.append(t)
            ys.append(y.copy())
            ks.append(k)
            if err == 0.0:
                factor = MAX_FACTOR
            else:
                factor = SAFETY * err ** -ALPHA * err_prev ** BETA
                factor = min(MAX_FACTOR, max(MIN_FACTOR, factor))
            if last_rejected:
                factor = min(1.0, factor)
            h = min(h * factor, cfg.h_max)
            err_prev = max(err, 1e-4)
            last_rejected = False
        else:
            rejected += 1
            h *= max(MIN_FACTOR, SAFETY * err ** -ALPHA)
            last_rejected = True

    return Solution(np.array(ts), np.array(ys), np.array(ks), rejected)


def integrate_fixed(rhs: Callable, y0, t_span, n_steps: int) -> Solution:
    """Same tableau with a uniform step and no error control."""
    t0, t1 = float(t_span[0]), float(t_span[1])
    if n_steps < 1:
        raise ValueError("n_steps must be positive")
    y = np.array(y0, dtype=float, ndmin=1)
    h = (t1 - t0) / n_steps
    ts = t0 + h * np.arange(n_steps + 1)
    ts[-1] = t1
    ys, ks = [y.copy()], []
    f = _eval(rhs, t0, y)
    for i in range(n_steps):
        y, k = _step(rhs, ts[i], y, f, ts[i + 1] - ts[i])
        f = _eval(rhs, ts[i + 1], y)
        k[6] = f
        ys.append(y.copy())
        ks.append(k)
    return Solution(ts, np.array(ys), np.array(ks))


def sample_at(sol: Solution, t_grid) -> np.ndarray:
    """Dense-output states at ``t_grid``; exact at accepted step times."""
    t_grid = np.atleast_1d(np.asarray(t_grid, dtype=float))
    if t_grid.size and (t_grid.min() < sol.t[0] or t_grid.max() > sol.t[-1]):
        raise ValueError(
            f"grid [{t_grid.min()!r}, {t_grid.max()!r}] outside span "
            f"[{sol.t[0]!r}, {sol.t[-1]!r}]")
    out = np.empty((t_grid.size, sol.y.shape[1]))
    idx = np.searchsorted(sol.t, t_grid, side="right") - 1
    for row, (tq, k) in enumerate(zip(t_grid, idx)):
        if k >= sol.n_steps:
            out[row] = sol.y[-1]
            continue
        t_lo = sol.t[k]
        if tq == t_lo:
            out[row] = sol.y[k]
            continue
        h = sol.t[k + 1] - t_lo
        s = (tq - t_lo) / h
        powers = np.array([s, s * s, s ** 3, s ** 4])
        out[row] = sol.y[k] + h * (sol.stages[k].T @ (P @ powers))
    return out
