"""Ensembles of diversified PINNs and the Gaussian summary of their estimates."""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .dataset import Dataset, corrupt_with_noise, partition
from .pinn import (PinnModel, TrainConfig, TrainingDiverged, angle_mare, build_model,
                   evaluation_grid, inertia_estimate, inertia_field, train)
from .system import BusSystem

log = logging.getLogger(__name__)

__all__ = [
    "NOISE_PALETTE",
    "MemberConfig",
    "MemberResult",
    "EnsembleReport",
    "MemberFailed",
    "derive_member_configs",
    "train_member",
    "train_ensemble",
    "posterior_stats",
    "normal_quantile",
    "confidence_interval",
    "pointwise_posterior",
    "gaussian_curve",
]

NOISE_PALETTE = (0.0, 0.005, 0.01, 0.02)
FRACTION_RANGE = (0.25, 0.50)
RANGE_JITTER = 0.10


class MemberFailed(RuntimeError):
    def __init__(self, index: int, cause: Exception):
        super().__init__(f"ensemble member {index} failed: {cause}")
        self.index = index


@dataclass(frozen=True)
class MemberConfig:
    index: int
    seed: int
    noise_sigma: float
    labeled_fraction: float
    p_subrange: tuple
    t_subrange: tuple
    train: TrainConfig = field(default_factory=TrainConfig)
    n_collocation: int = 9000

    def __post_init__(self):
        lo, hi = FRACTION_RANGE
        if not lo <= self.labeled_fraction <= hi:
            raise ValueError(f"labeled_fraction {self.labeled_fraction} outside [{lo}, {hi}]")
        for name in ("p_subrange", "t_subrange"):
            a, b = getattr(self, name)
            if not a < b:
                raise ValueError(f"{name} must be a nonempty interval")
            object.__setattr__(self, name, (float(a), float(b)))


def _jitter(lo: float, hi: float, rng: np.random.Generator) -> tuple:
    width = hi - lo
    a, b = lo + rng.uniform(-1, 1) * RANGE_JITTER * width, hi + rng.uniform(-1, 1) * RANGE_JITTER * width
    return max(lo, a), min(hi, b)


def derive_member_configs(n: int, system: BusSystem, base: TrainConfig | None = None,
                          master_seed: int = 0, palette: Sequence[float] = NOISE_PALETTE,
                          n_collocation: int = 9000) -> list[MemberConfig]:
    """Diversity settings for ``n`` members, fully determined by ``master_seed``.

    Each member gets its own initialization seed, a noise level cycled from
    ``palette``, a labeled fraction drawn from [0.25, 0.5] and (P, t) boxes
    whose endpoints move by up to 10% of the range width, clipped to the
    system domain.
    """
    if n < 1:
        raise ValueError("an ensemble needs at least one member")
    if not palette:
        raise ValueError("noise palette must not be empty")
    base = base or TrainConfig()
    rng = np.random.default_rng(master_seed)
    seeds: list[int] = []
    state = np.random.SeedSequence(master_seed).generate_state(4 * n)
    for s in state:
        if int(s) not in seeds:
            seeds.append(int(s))
        if len(seeds) == n:
            break
    configs = []
    for j in range(n):
        frac = float(rng.uniform(*FRACTION_RANGE))
        p_sub = _jitter(*system.p_range, rng)
        t_sub = _jitter(*system.t_span, rng)
        configs.append(MemberConfig(
            index=j,
            seed=seeds[j],
            noise_sigma=float(palette[j % len(palette)]),
            labeled_fraction=frac,
            p_subrange=p_sub,
            t_subrange=t_sub,
            train=replace(base, seed=seeds[j]),
            n_collocation=n_collocation,
        ))
    return configs


@dataclass
class MemberResult:
    config: MemberConfig
    model: PinnModel
    estimate: np.ndarray
    angle_mare: float
    final_loss: float
    history: list = field(default_factory=list, repr=False)


def train_member(system: BusSystem, dataset: Dataset, cfg: MemberConfig, grid=None,
                 holdout: Dataset | None = None, keep_history: bool = False) -> MemberResult:
    """Train one member on its own noisy copy and partition of ``dataset``."""
    noise_seed, part_seed = (int(s) for s in np.random.SeedSequence(cfg.seed).generate_state(2))
    noisy = corrupt_with_noise(dataset, cfg.noise_sigma, noise_seed)
    part = partition(noisy, cfg.n_collocation, cfg.labeled_fraction, part_seed,
                     p_range=cfg.p_subrange, t_range=cfg.t_subrange, clamp=True)
    model = build_model(system, cfg.seed)
    model, history = train(model, part.labeled, part.collocation, cfg.train)
    estimate = inertia_estimate(model, grid)
    mare = angle_mare(model, holdout if holdout is not None else dataset)
    return MemberResult(cfg, model, estimate, mare, history[-1].total,
                        history if keep_history else [])


def _run_member(args):
    system, dataset, cfg, grid, holdout, fail_fast = args
    try:
        return train_member(system, dataset, cfg, grid, holdout)
    except (TrainingDiverged, FloatingPointError, ValueError) as exc:
        if fail_fast:
            raise MemberFailed(cfg.index, exc) from exc
        log.warning("member %d skipped: %s", cfg.index, exc)
        return None


@dataclass(frozen=True)
class EnsembleReport:
    system: str
    estimates: tuple
    mu: float
    sigma2: float
    level: float
    lo: float
    hi: float
    members: tuple = ()

    @property
    def n(self) -> int:
        return len(self.estimates)

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)

    @classmethod
    def from_estimates(cls, system: str, estimates: Sequence[float], level: float = 0.95,
                       members: Sequence[dict] = ()) -> "EnsembleReport":
        est = tuple(float(e) for e in estimates)
        mu, sigma2 = posterior_stats(est)
        lo, hi = confidence_interval(mu, sigma2, level)
        return cls(system, est, mu, sigma2, float(level), lo, hi, tuple(members))

    def is_consistent(self) -> bool:
        """Recomputing the summary from the stored estimates reproduces it exactly."""
        again = EnsembleReport.from_estimates(self.system, self.estimates, self.level, self.members)
        return (again.mu, again.sigma2, again.lo, again.hi) == (self.mu, self.sigma2, self.lo, self.hi)

    def to_dict(self) -> dict:
        return {
            "system": self.system,
            "n": self.n,
            "estimates": list(self.estimates),
            "mu": self.mu,
            "sigma2": self.sigma2,
            "sigma": self.sigma,
            "ci": {"level": self.level, "lo": self.lo, "hi": self.hi},
            "members": [dict(m) for m in self.members],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "EnsembleReport":
        ci = d["ci"]
        return cls(d["system"], tuple(d["estimates"]), d["mu"], d["sigma2"], ci["level"],
                   ci["lo"], ci["hi"], tuple(d.get("members", ())))


def _member_entry(r: MemberResult) -> dict:
    c = r.config
    return {
        "index": c.index,
        "seed": c.seed,
        "noise_sigma": c.noise_sigma,
        "labeled_fraction": c.labeled_fraction,
        "p_subrange": list(c.p_subrange),
        "t_subrange": list(c.t_subrange),
        "angle_mare": r.angle_mare,
        "final_loss": r.final_loss,
    }


def train_ensemble(system: BusSystem, dataset: Dataset, configs: Sequence[MemberConfig],
                   level: float = 0.95, jobs: int = 1, fail_fast: bool = True,
                   holdout: Dataset | None = None, grid=None,
                   qoi: int = 0) -> tuple[list[MemberResult], EnsembleReport]:
    """Train every member and summarize unknown inertia ``qoi`` as a Gaussian.

    Results do not depend on ``jobs``: each member's randomness comes only
    from its own configuration.
    """
    if not configs:
        raise ValueError("no member configurations")
    if dataset.system != system.name or dataset.n_gen != system.n_gen:
        raise ValueError(f"dataset for {dataset.system!r} does not match system {system.name!r}")
    if not system.unknown_inertia:
        raise ValueError("system has no unknown inertia to estimate")
    grid = evaluation_grid(system) if grid is None else grid
    tasks = [(system, dataset, cfg, grid, holdout, fail_fast) for cfg in configs]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_member, tasks))
    else:
        results = [_run_member(t) for t in tasks]
    members = [r for r in results if r is not None]
    if not members:
        raise RuntimeError("every ensemble member failed")
    report = EnsembleReport.from_estimates(
        system.name, [m.estimate[qoi] for m in members], level,
        [_member_entry(m) for m in members])
    return members, report


def posterior_stats(estimates: Sequence[float]) -> tuple[float, float]:
    """Ensemble mean and (population) variance of per-member estimates.

    The variance is the mean of squares minus the squared mean, evaluated in
    two passes as the mean squared deviation so it never goes negative.
    """
    x = [float(e) for e in estimates]
    if not x:
        raise ValueError("need at least one estimate")
    n = len(x)
    mu = math.fsum(x) / n
    dev = [e - mu for e in x]
    # second term corrects the rounding error left in mu
    sigma2 = (math.fsum(d * d for d in dev) - math.fsum(dev) ** 2 / n) / n
    return mu, max(sigma2, 0.0)


# Acklam's rational approximation to the standard normal quantile
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def normal_quantile(p: float) -> float:
    if not 0.0 < p < 1.0:
        raise ValueError("probability must lie in (0, 1)")
    if p < _P_LOW:
        q = math.sqrt(-2 * math.log(p))
        return (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
               ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1)
    if p > 1 - _P_LOW:
        return -normal_quantile(1 - p)
    q = p - 0.5
    r = q * q
    return (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / \
           (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1)


def confidence_interval(mu: float, sigma2: float, level: float = 0.95) -> tuple[float, float]:
    """Two-sided Gaussian interval ``mu +- z sigma`` at coverage ``level``."""
    if not 0.0 < level < 1.0:
        raise ValueError("confidence level must lie in (0, 1)")
    if sigma2 < 0:
        raise ValueError("variance must be non-negative")
    half = normal_quantile(0.5 + level / 2) * math.sqrt(sigma2)
    return mu - half, mu + half


def pointwise_posterior(models: Sequence[PinnModel], t, p, qoi: int = 0):
    """Mean and variance of the inertia field across members at each (t, P)."""
    fields = np.stack([inertia_field(m, t, p)[:, qoi] for m in models])
    mu = fields.mean(axis=0)
    sigma2 = np.maximum(((fields - mu) ** 2).mean(axis=0), 0.0)
    return mu, sigma2


def gaussian_curve(mu: float, sigma2: float, n: int = 401, width: float = 4.0):
    """Density of N(mu, sigma2) sampled on ``[mu - width sigma, mu + width sigma]``."""
    sigma = math.sqrt(sigma2)
    if sigma == 0.0:
        raise ValueError("degenerate Gaussian has no density curve")
    x = np.linspace(mu - width * sigma, mu + width * sigma, n)
    pdf = np.exp(-0.5 * ((x - mu) / sigma) ** 2) / (sigma * math.sqrt(2 * math.pi))
    return x, pdf


def configs_to_dicts(configs: Sequence[MemberConfig]) -> list[dict]:
    return [asdict(c) for c in configs]
