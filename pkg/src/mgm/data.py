"""Synthetic two-agent system: Swiss-roll agent 1, Gaussian agent 2, and a
linear mixer ``y = beta * x1 + (1 - beta) * x2``, plus the biased and
low-data treatments of agent 1.
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import seeding

PAIRED_HEADER = ["x1_0", "x1_1", "x2_0", "x2_1", "y_0", "y_1"]
AGENT1_HEADER = ["x1_0", "x1_1"]
SCENARIOS = ("full", "bias100", "bias90", "low32", "low64")


@dataclass(frozen=True)
class SwissRoll:
    """t ~ U(t_min, t_max); point = (t cos t, t sin t) * scale + N(0, noise^2 I)."""

    t_min: float = 1.5 * math.pi
    t_max: float = 4.5 * math.pi
    scale: float = 1.0 / 15.0
    noise: float = 0.02


def swiss_roll(n: int, seed, params: SwissRoll = SwissRoll(), return_t: bool = False):
    if n < 1:
        raise ValueError(f"swiss_roll needs n >= 1, got {n}")
    rng = np.random.default_rng(seed)
    t = rng.uniform(params.t_min, params.t_max, size=n)
    pts = np.stack([t * np.cos(t), t * np.sin(t)], axis=1) * params.scale
    pts = pts + params.noise * rng.standard_normal((n, 2))
    return (pts, t) if return_t else pts


def _psd_root(cov: np.ndarray) -> np.ndarray:
    cov = np.asarray(cov, dtype=np.float64)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ValueError(f"covariance must be square, got shape {cov.shape}")
    if not np.allclose(cov, cov.T, rtol=0, atol=1e-12):
        raise ValueError("covariance must be symmetric")
    eig, vec = np.linalg.eigh(cov)
    if eig.min() < -1e-12 * max(1.0, np.abs(eig).max()):
        raise ValueError(f"covariance is not positive semidefinite (min eigenvalue {eig.min():.3g})")
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        # singular but PSD: symmetric square root instead of Cholesky
        return vec * np.sqrt(np.clip(eig, 0.0, None))


def gaussian2d(n: int, mean, cov, seed) -> np.ndarray:
    """Box-Muller standard normals pushed through a Cholesky factor of ``cov``."""
    if n < 1:
        raise ValueError(f"gaussian2d needs n >= 1, got {n}")
    mean = np.asarray(mean, dtype=np.float64).reshape(2)
    root = _psd_root(cov)
    rng = np.random.default_rng(seed)
    u1 = 1.0 - rng.random(n)  # (0, 1], keeps log finite
    u2 = rng.random(n)
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.stack([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)], axis=1)
    return mean + z @ root.T


@dataclass(frozen=True)
class ScenarioSpec:
    beta: float = 0.7
    kind: str = "full"
    n_samples: int = 128_000
    n_test: int = 2_000
    seed: int = 0
    gauss_mean: tuple[float, float] = (0.0, 0.0)
    gauss_cov: tuple[tuple[float, float], tuple[float, float]] = ((0.04, 0.0), (0.0, 0.04))
    # top-right region: both agent-1 coordinates above this quantile
    bias_quantile: float = 0.6
    roll: SwissRoll = field(default_factory=SwissRoll)

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")
        if self.n_samples < 1 or self.n_test < 1:
            raise ValueError("sample counts must be >= 1")
        if not 0.0 < self.bias_quantile < 1.0:
            raise ValueError(f"bias_quantile must lie in (0, 1), got {self.bias_quantile}")
        treatment(self.kind)  # validates

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gauss_cov"] = [list(r) for r in self.gauss_cov]
        d["gauss_mean"] = list(self.gauss_mean)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        d = dict(d)
        d["gauss_mean"] = tuple(d["gauss_mean"])
        d["gauss_cov"] = tuple(tuple(r) for r in d["gauss_cov"])
        d["roll"] = SwissRoll(**d["roll"])
        return cls(**d)


def treatment(kind: str) -> tuple[str, int | None]:
    """Parse a scenario name into (treatment, low-data size)."""
    if kind in ("full", "bias100", "bias90"):
        return kind, None
    m = re.fullmatch(r"low(\d+)", kind)
    if m and int(m.group(1)) >= 1:
        return "low", int(m.group(1))
    raise ValueError(f"unknown scenario {kind!r}; expected full, bias100, bias90 or low<N>")


@dataclass
class Dataset:
    """Paired (x1, x2, y) rows plus the agent-1 rows that survive treatment.

    ``x1``, ``x2`` and ``y`` are the untreated draw (the mixer's data and the
    other agents' data); ``agent1`` is what the newly arrived agent may train on.
    """

    x1: np.ndarray
    x2: np.ndarray
    y: np.ndarray
    agent1: np.ndarray
    spec: ScenarioSpec
    kept: np.ndarray

    @property
    def paired(self) -> np.ndarray:
        return np.hstack([self.x1, self.x2, self.y])

    @property
    def conditions(self) -> np.ndarray:
        return np.hstack([self.x1, self.x2])


def _draw(spec: ScenarioSpec, n: int, split: str):
    x1 = swiss_roll(n, seeding.derive(spec.seed, split, "agent1"), spec.roll)
    x2 = gaussian2d(n, spec.gauss_mean, spec.gauss_cov, seeding.derive(spec.seed, split, "agent2"))
    y = spec.beta * x1 + (1.0 - spec.beta) * x2
    return x1, x2, y


def top_right_mask(x1: np.ndarray, q: float) -> np.ndarray:
    thr = np.quantile(x1, q, axis=0)
    return (x1[:, 0] > thr[0]) & (x1[:, 1] > thr[1])


def make_scenario(spec: ScenarioSpec) -> tuple[Dataset, Dataset]:
    """Training data with the agent-1 treatment applied, and an untouched test set."""
    kind, low_n = treatment(spec.kind)
    x1, x2, y = _draw(spec, spec.n_samples, "train")
    n = spec.n_samples
    rng = seeding.rng(spec.seed, "treatment")
    if kind == "full":
        kept = np.arange(n)
    elif kind in ("bias100", "bias90"):
        inside = top_right_mask(x1, spec.bias_quantile)
        outside_idx = np.flatnonzero(~inside)
        if kind == "bias100":
            kept = outside_idx
        else:
            inside_idx = np.flatnonzero(inside)
            n_keep = math.ceil(0.1 * inside_idx.size)
            kept = np.sort(np.concatenate([outside_idx, rng.choice(inside_idx, n_keep, replace=False)]))
    else:
        if low_n > n:
            raise ValueError(f"low-data size {low_n} exceeds the {n} generated samples")
        kept = np.sort(rng.choice(n, low_n, replace=False))
    if kept.size == 0:
        raise ValueError(f"treatment {spec.kind!r} left no agent-1 training rows")
    train = Dataset(x1, x2, y, x1[kept], spec, kept)
    t1, t2, ty = _draw(spec, spec.n_test, "test")
    test = Dataset(t1, t2, ty, t1, spec, np.arange(spec.n_test))
    return train, test


# ------------------------------------------------------------------- file io

def write_csv(path, rows: np.ndarray, header: list[str]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, rows, fmt="%.17g", delimiter=",", header=",".join(header), comments="")
    return path


def read_csv(path, header: list[str] | None = None) -> np.ndarray:
    path = Path(path)
    with path.open() as fh:
        first = fh.readline().strip().split(",")
    if header is not None and first != header:
        raise ValueError(f"{path}: header {first} does not match {header}")
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


def save_scenario(out_dir, train: Dataset, test: Dataset, extra: dict | None = None) -> dict:
    """train.csv (paired, untreated), agent1.csv (treated), test.csv, spec.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "train": write_csv(out / "train.csv", train.paired, PAIRED_HEADER).name,
        "agent1": write_csv(out / "agent1.csv", train.agent1, AGENT1_HEADER).name,
        "test": write_csv(out / "test.csv", test.paired, PAIRED_HEADER).name,
    }
    meta = {
        "spec": train.spec.to_dict(),
        "seed": train.spec.seed,
        "rows": {"train": len(train.x1), "agent1": len(train.agent1), "test": len(test.x1)},
        "files": files,
        **(extra or {}),
    }
    (out / "spec.json").write_text(json.dumps(meta, indent=2))
    return meta


def load_scenario(data_dir) -> tuple[Dataset, Dataset]:
    d = Path(data_dir)
    meta = json.loads((d / "spec.json").read_text())
    spec = ScenarioSpec.from_dict(meta["spec"])
    train = read_csv(d / "train.csv", PAIRED_HEADER)
    agent1 = read_csv(d / "agent1.csv", AGENT1_HEADER)
    test = read_csv(d / "test.csv", PAIRED_HEADER)
    tr = Dataset(train[:, 0:2], train[:, 2:4], train[:, 4:6], agent1, spec, np.arange(len(agent1)))
    te = Dataset(test[:, 0:2], test[:, 2:4], test[:, 4:6], test[:, 0:2], spec, np.arange(len(test)))
    return tr, te
