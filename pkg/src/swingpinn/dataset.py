"""Ground-truth trajectories, label noise, partitions and their CSV form."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .ode import SolverConfig, SolverError, integrate_adaptive, sample_at
from .system import BusSystem, vector_field

__all__ = [
    "Dataset",
    "Partition",
    "CsvFormatError",
    "TrajectoryError",
    "generate_dataset",
    "corrupt_with_noise",
    "partition",
    "save_csv",
    "load_csv",
]


class CsvFormatError(ValueError):
    pass


class TrajectoryError(RuntimeError):
    def __init__(self, index: int, cause: Exception):
        super().__init__(f"trajectory {index} failed: {cause}")
        self.index = index


@dataclass(frozen=True)
class Dataset:
    """Rotor-angle trajectories sampled on one shared uniform time grid.

    ``angles`` has shape ``[n_traj, n_steps, n_gen]``.
    """

    system: str
    p_inputs: np.ndarray
    times: np.ndarray
    angles: np.ndarray
    noise: dict | None = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        n_traj, n_steps = len(self.p_inputs), len(self.times)
        if self.angles.shape[:2] != (n_traj, n_steps):
            raise ValueError("angles must be [n_traj, n_steps, n_gen]")
        if not np.all(np.isfinite(self.angles)):
            raise ValueError("non-finite angle samples")

    @property
    def n_traj(self) -> int:
        return len(self.p_inputs)

    @property
    def n_steps(self) -> int:
        return len(self.times)

    @property
    def n_gen(self) -> int:
        return self.angles.shape[2]

    @property
    def n_samples(self) -> int:
        return self.n_traj * self.n_steps

    def flat(self):
        """``(t, P, angles)`` with one row per sample, trajectory-major."""
        t = np.tile(self.times, self.n_traj)
        p = np.repeat(self.p_inputs, self.n_steps)
        return t, p, self.angles.reshape(-1, self.n_gen)

    def subset(self, traj_idx) -> "Dataset":
        traj_idx = np.asarray(traj_idx)
        return replace(self, p_inputs=self.p_inputs[traj_idx], angles=self.angles[traj_idx])

    def equals(self, other: "Dataset") -> bool:
        return (np.array_equal(self.p_inputs, other.p_inputs)
                and np.array_equal(self.times, other.times)
                and np.array_equal(self.angles, other.angles))


@dataclass(frozen=True)
class Partition:
    """Labeled samples and collocation points drawn from a dataset grid.

    Index arrays refer to flat sample rows of the source dataset; they are
    ``None`` for partitions read back from CSV.
    """

    labeled_t: np.ndarray
    labeled_p: np.ndarray
    labels: np.ndarray
    colloc_t: np.ndarray
    colloc_p: np.ndarray
    labeled_index: np.ndarray | None = None
    colloc_index: np.ndarray | None = None
    n_initial: int = 0

    @property
    def n_u(self) -> int:
        return len(self.labeled_t)

    @property
    def n_f(self) -> int:
        return len(self.colloc_t)

    @property
    def labeled(self):
        return self.labeled_t, self.labeled_p, self.labels

    @property
    def collocation(self):
        return self.colloc_t, self.colloc_p

    def equals(self, other: "Partition") -> bool:
        return all(np.array_equal(a, b) for a, b in (
            (self.labeled_t, other.labeled_t), (self.labeled_p, other.labeled_p),
            (self.labels, other.labels), (self.colloc_t, other.colloc_t),
            (self.colloc_p, other.colloc_p)))


def simulate(system: BusSystem, p_input: float, times, cfg: SolverConfig) -> np.ndarray:
    """Flat-start trajectory sampled at ``times``; shape ``[len(times), n_gen]``."""
    y0 = np.zeros(2 * system.n_gen)
    sol = integrate_adaptive(vector_field(system, p_input), y0, system.t_span, cfg)
    return sample_at(sol, times)[:, : system.n_gen]


def generate_dataset(system: BusSystem, n_traj: int = 100, n_steps: int = 201, seed: int = 0,
                     solver: SolverConfig | None = None) -> Dataset:
    if n_traj < 1 or n_steps < 2:
        raise ValueError("need n_traj >= 1 and n_steps >= 2")
    solver = solver or SolverConfig()
    rng = np.random.default_rng(seed)
    p_inputs = rng.uniform(*system.p_range, size=n_traj)
    times = np.linspace(*system.t_span, n_steps)
    angles = np.empty((n_traj, n_steps, system.n_gen))
    for k, p in enumerate(p_inputs):
        try:
            angles[k] = simulate(system, float(p), times, solver)
        except SolverError as exc:
            raise TrajectoryError(k, exc) from exc
    prov = {"rtol": solver.rtol, "atol": solver.atol, "seed": seed}
    return Dataset(system.name, p_inputs, times, angles, None, prov)


def corrupt_with_noise(dataset: Dataset, sigma: float, seed: int) -> Dataset:
    """Copy of ``dataset`` with i.i.d. Gaussian noise added to every angle label."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    noisy = dataset.angles.copy()
    if sigma > 0:
        noisy += np.random.default_rng(seed).normal(0.0, sigma, size=noisy.shape)
    return replace(dataset, angles=noisy, noise={"sigma": float(sigma), "seed": int(seed)})


def partition(dataset: Dataset, n_collocation: int = 9000, labeled_fraction: float = 0.25,
              seed: int = 0, p_range=None, t_range=None, clamp: bool = False) -> Partition:
    """Sample collocation points and labeled points from the dataset grid.

    The labeled set is every initial-condition row plus
    ``round(labeled_fraction * n_collocation)`` interior points taken from the
    collocation set. ``p_range``/``t_range`` restrict the candidate pool to a
    sub-box of the domain; initial-condition rows of the retained
    trajectories are labeled regardless of ``t_range``. With ``clamp`` a
    pool smaller than ``n_collocation`` is used whole instead of raising.
    """
    if not 0.0 <= labeled_fraction <= 1.0:
        raise ValueError("labeled_fraction must lie in [0, 1]")
    t, p, y = dataset.flat()
    keep = np.ones(len(t), dtype=bool)
    if p_range is not None:
        keep &= (p >= p_range[0]) & (p <= p_range[1])
    initial = np.flatnonzero(keep & (t == dataset.times[0]))
    if t_range is not None:
        keep &= (t >= t_range[0]) & (t <= t_range[1])
    pool = np.flatnonzero(keep)
    if clamp:
        n_collocation = min(n_collocation, len(pool))
    if n_collocation > len(pool):
        raise ValueError(f"n_collocation={n_collocation} exceeds the {len(pool)} available grid points")

    rng = np.random.default_rng(seed)
    colloc = np.sort(rng.choice(pool, size=n_collocation, replace=False))
    interior_pool = colloc[t[colloc] != dataset.times[0]]
    n_interior = min(int(round(labeled_fraction * n_collocation)), len(interior_pool))
    interior = np.sort(rng.choice(interior_pool, size=n_interior, replace=False))
    labeled = np.concatenate([initial, interior])
    return Partition(t[labeled], p[labeled], y[labeled], t[colloc], p[colloc],
                     labeled, colloc, len(initial))


def _fmt(x: float) -> str:
    return repr(float(x))


def save_csv(obj, path) -> None:
    """Write a ``Dataset`` or ``Partition`` with full round-trip precision."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        if isinstance(obj, Dataset):
            w.writerow(["traj", "t", "P"] + [f"delta_{i + 1}" for i in range(obj.n_gen)])
            for k in range(obj.n_traj):
                pk = _fmt(obj.p_inputs[k])
                for j, tj in enumerate(obj.times):
                    w.writerow([k, _fmt(tj), pk] + [_fmt(a) for a in obj.angles[k, j]])
        elif isinstance(obj, Partition):
            n_gen = obj.labels.shape[1]
            w.writerow(["kind", "t", "P"] + [f"label_{i + 1}" for i in range(n_gen)])
            for tk, pk, yk in zip(obj.labeled_t, obj.labeled_p, obj.labels):
                w.writerow(["labeled", _fmt(tk), _fmt(pk)] + [_fmt(a) for a in yk])
            for tk, pk in zip(obj.colloc_t, obj.colloc_p):
                w.writerow(["collocation", _fmt(tk), _fmt(pk)] + [""] * n_gen)
        else:
            raise TypeError(f"cannot write {type(obj).__name__} as CSV")


def _number(cell: str, row: int, col: str) -> float:
    try:
        x = float(cell)
    except ValueError:
        raise CsvFormatError(f"row {row}, column {col!r}: non-numeric cell {cell!r}") from None
    if not math.isfinite(x):
        raise CsvFormatError(f"row {row}, column {col!r}: non-finite cell {cell!r}")
    return x


def _check_header(header, first: list[str], prefix: str) -> int:
    if header[: len(first)] != first:
        raise CsvFormatError(f"malformed header {header!r}")
    rest = header[len(first):]
    if not rest or rest != [f"{prefix}_{i + 1}" for i in range(len(rest))]:
        raise CsvFormatError(f"malformed header {header!r}")
    return len(rest)


def load_csv(path, system: str = "unknown"):
    """Read back what ``save_csv`` wrote; the header decides the type.

    Dataset files may omit the ``traj`` column, in which case consecutive
    rows sharing a P value form one trajectory.
    """
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise CsvFormatError("empty file")
    header = [h.strip() for h in rows[0]]
    body = rows[1:]
    if header and header[0] == "kind":
        return _load_partition(header, body)
    return _load_dataset(header, body, system)


def _load_dataset(header, body, system) -> Dataset:
    has_traj = bool(header) and header[0] == "traj"
    first = ["traj", "t", "P"] if has_traj else ["t", "P"]
    n_gen = _check_header(header, first, "delta")
    traj, t, p, y = [], [], [], []
    for r, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise CsvFormatError(f"row {r}: expected {len(header)} cells, got {len(row)}")
        vals = [_number(c, r, h) for c, h in zip(row, header)]
        if has_traj:
            traj.append(int(vals[0]))
            vals = vals[1:]
        t.append(vals[0])
        p.append(vals[1])
        y.append(vals[2:])
    if not t:
        raise CsvFormatError("no data rows")
    t, p, y = np.array(t), np.array(p), np.array(y).reshape(-1, n_gen)
    if not has_traj:
        traj = np.concatenate([[0], np.cumsum(p[1:] != p[:-1])])
    traj = np.asarray(traj)
    ids = list(dict.fromkeys(traj.tolist()))
    groups = [np.flatnonzero(traj == k) for k in ids]
    n_steps = len(groups[0])
    if any(len(g) != n_steps for g in groups):
        raise CsvFormatError("trajectories have different lengths")
    times = t[groups[0]]
    for g in groups:
        if not np.array_equal(t[g], times) or np.any(p[g] != p[g[0]]):
            raise CsvFormatError("trajectories must share the time grid and a constant P")
    p_inputs = np.array([p[g[0]] for g in groups])
    angles = np.stack([y[g] for g in groups])
    return Dataset(system, p_inputs, times, angles)


def _load_partition(header, body) -> Partition:
    n_gen = _check_header(header, ["kind", "t", "P"], "label")
    lt, lp, ly, ct, cp = [], [], [], [], []
    for r, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise CsvFormatError(f"row {r}: expected {len(header)} cells, got {len(row)}")
        kind = row[0]
        tv, pv = _number(row[1], r, "t"), _number(row[2], r, "P")
        if kind == "labeled":
            lt.append(tv)
            lp.append(pv)
            ly.append([_number(c, r, h) for c, h in zip(row[3:], header[3:])])
        elif kind == "collocation":
            if any(c.strip() for c in row[3:]):
                raise CsvFormatError(f"row {r}: collocation rows carry no labels")
            ct.append(tv)
            cp.append(pv)
        else:
            raise CsvFormatError(f"row {r}: unknown kind {kind!r}")
    return Partition(np.array(lt), np.array(lp), np.array(ly).reshape(-1, n_gen),
                     np.array(ct), np.array(cp))
