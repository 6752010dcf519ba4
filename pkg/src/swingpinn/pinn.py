"""Physics-informed networks for the swing equation.

A ``PinnModel`` pairs an angle network ``(t, P) -> delta`` with, when some
inertia is unknown, an inertia network ``(t, P) -> m`` ending in a softplus
so the estimate stays positive. Training minimizes the sum of a data misfit
on labeled samples and the squared swing-equation residual on collocation
points.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import DiffValue
from .nn import MLP, forward, init_params
from .system import BusSystem, injected_power

log = logging.getLogger(__name__)

__all__ = [
    "PinnModel",
    "TrainConfig",
    "LossBreakdown",
    "TrainingDiverged",
    "DomainExtrapolationWarning",
    "build_model",
    "assemble_residual",
    "physics_residual",
    "total_loss",
    "train",
    "Adam",
    "predict_rotor_angle",
    "inertia_estimate",
    "evaluation_grid",
    "angle_mare",
    "save_model",
    "load_model",
]


class TrainingDiverged(RuntimeError):
    pass


class DomainExtrapolationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    iterations: int = 20_000
    physics_batch: int = 512
    data_batch: int = 256
    seed: int = 0
    lambda_u: float = 1.0
    lambda_f: float = 1.0
    decay_at: tuple = (0.5, 0.75)
    decay_factor: float = 0.5
    divergence_factor: float = 1e6

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.iterations <= 0:
            raise ValueError("iterations must be positive")
        if self.physics_batch <= 0 or self.data_batch <= 0:
            raise ValueError("batch sizes must be positive")
        if self.lambda_u < 0 or self.lambda_f < 0 or self.lambda_u == self.lambda_f == 0:
            raise ValueError("loss weights must be >= 0 and not both zero")
        object.__setattr__(self, "decay_at", tuple(self.decay_at))

    def learning_rate_at(self, step: int) -> float:
        lr = self.learning_rate
        for frac in self.decay_at:
            if step >= int(frac * self.iterations):
                lr *= self.decay_factor
        return lr


class LossBreakdown(NamedTuple):
    data: float
    physics: float
    total: float


@dataclass
class PinnModel:
    system: BusSystem
    angle_net: MLP
    inertia_net: MLP | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.angle_net.layer_sizes[-1] != self.system.n_gen:
            raise ValueError("angle network must output one angle per generator")
        n_unknown = len(self.system.unknown_inertia)
        if n_unknown and (self.inertia_net is None or self.inertia_net.layer_sizes[-1] != n_unknown):
            raise ValueError("inertia network must output one value per unknown inertia")
        if self.inertia_net is not None and self.inertia_net.head != "softplus":
            raise ValueError("inertia network needs a softplus head")

    def params(self) -> list:
        out = self.angle_net.params()
        if self.inertia_net is not None:
            out += self.inertia_net.params()
        return out

    def with_params(self, params: Sequence) -> "PinnModel":
        n = len(self.angle_net.params())
        inertia = None if self.inertia_net is None else self.inertia_net.with_params(params[n:])
        return PinnModel(self.system, self.angle_net.with_params(params[:n]), inertia, dict(self.meta))


def build_model(system: BusSystem, seed: int, angle_hidden=(32, 32),
                inertia_hidden=(16, 16)) -> PinnModel:
    """Fresh model with inputs normalized over the system's (t, P) domain."""
    lo = np.array([system.t_span[0], system.p_range[0]])
    hi = np.array([system.t_span[1], system.p_range[1]])
    seeds = np.random.SeedSequence(seed).generate_state(2)
    angle = init_params([2, *angle_hidden, system.n_gen], int(seeds[0]),
                        input_lo=lo, input_hi=hi)
    inertia = None
    if system.unknown_inertia:
        inertia = init_params([2, *inertia_hidden, len(system.unknown_inertia)], int(seeds[1]),
                              head="softplus", input_lo=lo, input_hi=hi)
    return PinnModel(system, angle, inertia)


def _split(model: PinnModel, params):
    n = len(model.angle_net.params())
    return params[:n], params[n:]


def _column(x, i: int, n: int):
    return x if n == 1 else ad.column(x, i)


def assemble_residual(inertia, damping, delta: DiffValue, p_electric, p_mech):
    """``inertia * delta'' + damping * delta' + P_e - P_m`` from its parts."""
    return ad.sub(ad.add(ad.add(ad.mul(inertia, delta.d2_dt2), ad.mul(damping, delta.d_dt)),
                         p_electric), p_mech)


def _residual_columns(model: PinnModel, t, p, params):
    system = model.system
    n = system.n_gen
    angle_params, inertia_params = _split(model, params)
    t = np.asarray(t, dtype=float).reshape(-1)
    p = np.asarray(p, dtype=float).reshape(-1)
    inputs = [ad.lift_input(t), ad.lift_constant(p)]
    delta = forward(model.angle_net, inputs, angle_params)
    m_hat = None
    if model.inertia_net is not None:
        m_hat = forward(model.inertia_net, [ad.lift_constant(t), ad.lift_constant(p)],
                        inertia_params).value
    pcol = p[:, None]
    angles = [_column(delta.value, i, n) for i in range(n)]
    pm = system.mechanical_power(pcol)
    unknown = system.unknown_inertia
    out = []
    for i in range(n):
        if i in unknown:
            m_i = _column(m_hat, unknown.index(i), len(unknown))
        else:
            m_i = float(system.inertia[i])
        d_i = DiffValue(angles[i], _column(delta.d_dt, i, n), _column(delta.d2_dt2, i, n))
        pe = injected_power(system, angles, i, pcol)
        out.append(assemble_residual(m_i, float(system.damping[i]), d_i, pe, pm[i]))
    return out


def physics_residual(model: PinnModel, t, p) -> np.ndarray:
    """Swing-equation residual per generator, shape ``[batch, n_gen]``."""
    cols = _residual_columns(model, t, p, model.params())
    res = np.column_stack([np.asarray(ad.value_of(c)).reshape(-1) for c in cols])
    if not np.all(np.isfinite(res)):
        raise FloatingPointError("non-finite physics residual")
    return res


def _loss_terms(model: PinnModel, params, labeled, colloc):
    """Data and physics terms as tape variables (or 0.0 for an empty set)."""
    data = physics = 0.0
    if labeled is not None and len(labeled[0]):
        t_u, p_u, y_u = labeled
        pred = forward(model.angle_net, [ad.lift_constant(np.asarray(t_u, dtype=float)),
                                         ad.lift_constant(np.asarray(p_u, dtype=float))],
                       _split(model, params)[0]).value
        y_u = np.asarray(y_u, dtype=float).reshape(len(t_u), -1)
        data = ad.scale(ad.mean(ad.square(ad.sub(pred, y_u))), y_u.shape[1])
    if colloc is not None and len(colloc[0]):
        for col in _residual_columns(model, colloc[0], colloc[1], params):
            physics = ad.add(ad.mean(ad.square(col)), physics)
    return data, physics


def _combine(data, physics, lambda_u, lambda_f):
    terms = [ad.scale(x, w) for x, w in ((data, lambda_u), (physics, lambda_f))
             if not ad._is_zero(x) and w != 0]
    if not terms:
        return 0.0
    return terms[0] if len(terms) == 1 else ad.add(terms[0], terms[1])


def total_loss(model: PinnModel, labeled=None, collocation=None,
               weights: tuple = (1.0, 1.0)) -> LossBreakdown:
    """Evaluate both loss terms; ``labeled`` is ``(t, P, angles)``, ``collocation`` is ``(t, P)``."""
    data, physics = _loss_terms(model, model.params(), labeled, collocation)
    data, physics = float(ad.value_of(data)), float(ad.value_of(physics))
    return LossBreakdown(data, physics, weights[0] * data + weights[1] * physics)


class _Batcher:
    """Draws minibatches without replacement, reshuffling once exhausted."""

    def __init__(self, n: int, size: int, rng: np.random.Generator):
        self.n, self.size, self.rng = n, min(size, n), rng
        self.order = np.arange(n)
        self.pos = n

    def next(self) -> np.ndarray:
        if self.size == self.n:
            return self.order
        if self.pos + self.size > self.n:
            self.order = self.rng.permutation(self.n)
            self.pos = 0
        idx = self.order[self.pos:self.pos + self.size]
        self.pos += self.size
        return idx


class Adam:
    """Adam with bias correction; updates the given arrays in place."""

    def __init__(self, params: list, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m1 = [np.zeros_like(p) for p in params]
        self.m2 = [np.zeros_like(p) for p in params]
        self.k = 0

    def step(self, grads, lr: float) -> None:
        self.k += 1
        c1, c2 = 1.0 - self.beta1 ** self.k, 1.0 - self.beta2 ** self.k
        for p, g, a, b in zip(self.params, grads, self.m1, self.m2):
            a *= self.beta1
            a += (1.0 - self.beta1) * g
            b *= self.beta2
            b += (1.0 - self.beta2) * g * g
            p -= lr * (a / c1) / (np.sqrt(b / c2) + self.eps)


def train(model: PinnModel, labeled, collocation, cfg: TrainConfig,
          log_every: int = 0) -> tuple[PinnModel, list[LossBreakdown]]:
    """Adam on minibatches of both sets; returns the final model and per-step losses.

    ``labeled`` is ``(t, P, angles)``; ``collocation`` is ``(t, P)``. Either may
    be ``None``. Everything random is drawn from ``cfg.seed``.
    """
    rng = np.random.default_rng(cfg.seed)
    lab = None if labeled is None else tuple(np.asarray(a, dtype=float) for a in labeled)
    col = None if collocation is None else tuple(np.asarray(a, dtype=float) for a in collocation)
    if (lab is None or not len(lab[0])) and (col is None or not len(col[0])):
        raise ValueError("need labeled samples or collocation points")
    lab_batches = _Batcher(len(lab[0]), cfg.data_batch, rng) if lab is not None and len(lab[0]) else None
    col_batches = _Batcher(len(col[0]), cfg.physics_batch, rng) if col is not None and len(col[0]) else None

    params = [p.copy() for p in model.params()]
    opt = Adam(params, cfg.beta1, cfg.beta2, cfg.eps)
    history: list[LossBreakdown] = []
    initial = None
    for step in range(cfg.iterations):
        lab_b = col_b = None
        if lab_batches is not None:
            idx = lab_batches.next()
            lab_b = tuple(a[idx] for a in lab)
        if col_batches is not None:
            idx = col_batches.next()
            col_b = tuple(a[idx] for a in col)
        tape = ad.Tape()
        watched = [tape.watch(p) for p in params]
        data, physics = _loss_terms(model, watched, lab_b, col_b)
        total = _combine(data, physics, cfg.lambda_u, cfg.lambda_f)
        entry = LossBreakdown(float(ad.value_of(data)), float(ad.value_of(physics)),
                              float(ad.value_of(total)))
        history.append(entry)
        if initial is None:
            initial = entry.total
        if not np.isfinite(entry.total) or entry.total > cfg.divergence_factor * initial:
            raise TrainingDiverged(f"loss {entry.total!r} at step {step} (initial {initial!r})")
        grads = tape.gradient(total, watched)

        opt.step(grads, cfg.learning_rate_at(step))
        if log_every and step % log_every == 0:
            log.info("step %d  L_u=%.3e  L_f=%.3e  L=%.3e", step, *entry)
    trained = model.with_params(params)
    trained.meta["train_config"] = asdict(cfg)
    return trained, history


def _outside_domain(system: BusSystem, t, p) -> bool:
    (t0, t1), (p0, p1) = system.t_span, system.p_range
    return bool(np.any(t < t0) or np.any(t > t1) or np.any(p < p0) or np.any(p > p1))


def predict_rotor_angle(model: PinnModel, t, p) -> np.ndarray:
    """Predicted rotor angles, shape ``[batch, n_gen]``; warns when extrapolating."""
    t, p = np.broadcast_arrays(np.asarray(t, dtype=float).reshape(-1),
                               np.asarray(p, dtype=float).reshape(-1))
    if _outside_domain(model.system, t, p):
        warnings.warn("prediction outside the training domain", DomainExtrapolationWarning,
                      stacklevel=2)
    out = forward(model.angle_net, [ad.lift_constant(t), ad.lift_constant(p)])
    return np.asarray(out.value)


def evaluation_grid(system: BusSystem, n_t: int = 21, n_p: int = 21):
    tt, pp = np.meshgrid(np.linspace(*system.t_span, n_t), np.linspace(*system.p_range, n_p),
                         indexing="ij")
    return tt.ravel(), pp.ravel()


def inertia_field(model: PinnModel, t, p) -> np.ndarray:
    """Pointwise inertia-network output, shape ``[batch, n_unknown]``."""
    if model.inertia_net is None:
        raise ValueError("model has no inertia network")
    t, p = np.broadcast_arrays(np.asarray(t, dtype=float).reshape(-1),
                               np.asarray(p, dtype=float).reshape(-1))
    return np.asarray(forward(model.inertia_net, [ad.lift_constant(t), ad.lift_constant(p)]).value)


def inertia_estimate(model: PinnModel, grid=None) -> np.ndarray:
    """Grid mean of the inertia network, one scalar per unknown inertia."""
    t, p = evaluation_grid(model.system) if grid is None else grid
    if np.size(t) == 0:
        raise ValueError("empty evaluation grid")
    return inertia_field(model, t, p).mean(axis=0)


def angle_mare(model: PinnModel, dataset) -> float:
    """Mean absolute relative angle error over the trajectories of ``dataset``.

    Relative error is taken per trajectory and generator as
    ``sum |pred - true| / sum |true|`` over time, so the zero angle of the
    flat start does not blow up the ratio.
    """
    t, p, truth = dataset.flat()
    pred = predict_rotor_angle(model, t, p).reshape(dataset.angles.shape)
    err = np.abs(pred - dataset.angles).sum(axis=1)
    scale = np.abs(dataset.angles).sum(axis=1)
    return float(np.mean(err / scale))


def model_to_dict(model: PinnModel, train_config: TrainConfig | None = None) -> dict:
    cfg = asdict(train_config) if train_config is not None else model.meta.get("train_config")
    return {
        "system": model.system.to_dict(),
        "angle_net": model.angle_net.to_dict(),
        "inertia_net": None if model.inertia_net is None else model.inertia_net.to_dict(),
        "train_config": cfg,
    }


def model_from_dict(d: dict) -> PinnModel:
    inertia = None if d.get("inertia_net") is None else MLP.from_dict(d["inertia_net"])
    meta = {"train_config": d["train_config"]} if d.get("train_config") else {}
    return PinnModel(BusSystem.from_dict(d["system"]), MLP.from_dict(d["angle_net"]), inertia, meta)


def save_model(model: PinnModel, path, train_config: TrainConfig | None = None) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model, train_config), indent=1))


def load_model(path) -> PinnModel:
    return model_from_dict(json.loads(Path(path).read_text()))


def config_from_dict(d: dict | None) -> TrainConfig:
    return TrainConfig(**(d or {}))


def with_seed(cfg: TrainConfig, seed: int) -> TrainConfig:
    return replace(cfg, seed=int(seed))
