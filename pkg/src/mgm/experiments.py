"""Scenario experiments: train a mixer, train the agent, score it against the test set.

One *cell* is (scenario, beta, mode) plus hyper-parameters.  The cell seed
feeds the mixer, agent and evaluation stages, each of which derives its own
named streams from it, so a cell reproduces the stage-by-stage command line
run made with the same ``--seed`` everywhere.  Cells are pure
functions of their config, so finished results are cached on disk under a
key made of the config and a digest of the training source files.  Editing
any of those files invalidates the cache.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from . import data, seeding
from .ot import w1_empirical
from .training import GanHyper, Mixer, MgmSetup, mixer_hyper, pretrain_mixer, train_agent

log = logging.getLogger(__name__)

BETAS = (0.0, 0.1, 0.3, 0.5, 0.7, 1.0)
_SOURCES = ("autodiff.py", "nn.py", "wgan.py", "training.py", "data.py", "seeding.py", "ot.py", "experiments.py")


def code_digest() -> str:
    here = Path(__file__).parent
    h = hashlib.sha256()
    for name in _SOURCES:
        h.update((here / name).read_bytes())
    return h.hexdigest()[:16]


def summarize(values: Iterable[float]) -> dict:
    v = np.asarray(list(values), dtype=np.float64)
    return {"per_run": v.tolist(), "mean": float(v.mean()), "std": float(v.std(ddof=0))}


def evaluate_samples(sample: Callable[[int, np.random.Generator], np.ndarray], test: np.ndarray,
                     runs: int = 16, n: int | None = None, seed: int = 0, metric: str = "euclidean") -> dict:
    """W1 between ``runs`` fresh generator draws and the fixed test cloud."""
    if runs < 1:
        raise ValueError("runs must be >= 1")
    test = np.asarray(test, dtype=np.float64)
    n = len(test) if n is None else n
    if n != len(test):
        raise ValueError(f"evaluation draws {n} samples but the test set has {len(test)} rows")
    scores = [w1_empirical(sample(n, seeding.rng(seed, "eval", r)), test, metric) for r in range(runs)]
    return summarize(scores)


@dataclass(frozen=True)
class CellConfig:
    scenario: str = "bias100"
    beta: float = 1.0
    mode: str = "baseline"
    alpha: float = 0.5
    n_samples: int = 16_000
    n_test: int = 2_000
    hidden: tuple[int, ...] = (512, 512, 512)
    iters: int = 20_000
    batch: int = 256
    n_critic: int = 5
    lr: float = 1e-4
    lam_agent: float = 0.1
    lam_mix: float = 1.0
    mixer_iters: int = 20_000
    mixer_batch: int = 256
    eval_runs: int = 16
    seed: int = 0
    data_seed: int = 0
    feedback_critic: str = "fresh"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    def scenario_spec(self) -> data.ScenarioSpec:
        return data.ScenarioSpec(beta=self.beta, kind=self.scenario, n_samples=self.n_samples,
                                 n_test=self.n_test, seed=self.data_seed)

    def agent_hyper(self) -> GanHyper:
        return GanHyper(hidden=self.hidden, lr=self.lr, batch=self.batch, n_critic=self.n_critic,
                        iters=self.iters, lam=self.lam_agent)

    def mixer_hyper(self) -> GanHyper:
        return mixer_hyper(hidden=self.hidden, lr=self.lr, batch=self.mixer_batch, n_critic=self.n_critic,
                           iters=self.mixer_iters, lam=self.lam_mix)

    def mixer_key(self) -> dict:
        d = self.to_dict()
        for k in ("mode", "alpha", "iters", "batch", "lam_agent", "eval_runs", "feedback_critic"):
            d.pop(k)
        d["scenario"] = "paired"  # the mixer always sees the untreated paired data
        return d


def _key(doc: dict) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:20]


def get_mixer(cfg: CellConfig, train: data.Dataset, cache_dir: Path | None) -> Mixer:
    path = None
    if cache_dir is not None:
        path = Path(cache_dir) / f"mixer-{_key({**cfg.mixer_key(), 'code': code_digest()})}.json"
        if path.exists():
            return Mixer.load(path)
    return pretrain_mixer(train.conditions, train.y, cfg.mixer_hyper(), seed=cfg.seed,
                          checkpoint=path)


def run_cell(cfg: CellConfig, cache_dir: str | Path | None = None, out_dir: str | Path | None = None) -> dict:
    """Train and evaluate one cell; returns the result document."""
    cache = Path(cache_dir) if cache_dir is not None else None
    key = _key({**cfg.to_dict(), "code": code_digest()})
    if cache is not None:
        hit = cache / f"cell-{key}.json"
        if hit.exists():
            return json.loads(hit.read_text())
    start = time.perf_counter()
    train, test = data.make_scenario(cfg.scenario_spec())
    setup_kw = {}
    if cfg.mode != "baseline":
        mixer = get_mixer(cfg, train, cache)
        setup_kw = dict(others=[train.x2], outputs=train.y, mixer=mixer, output_conditions=train.conditions)
    setup = MgmSetup(train.agent1, mode=cfg.mode, alpha=cfg.alpha, hyper=cfg.agent_hyper(),
                     lam_mix=cfg.lam_mix, feedback_critic=cfg.feedback_critic, **setup_kw)
    ckpt = log_path = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        ckpt, log_path = out / f"agent-{key}.json", out / f"agent-{key}.jsonl"
    trainer, report = train_agent(setup, seed=cfg.seed, checkpoint=ckpt, log_path=log_path)
    scores = evaluate_samples(trainer.sample, test.agent1, runs=cfg.eval_runs, seed=cfg.seed)
    tail = report.records[-min(100, len(report.records)):] if report.records else []
    doc = {
        "config": cfg.to_dict(),
        "code": code_digest(),
        "w1": scores,
        "final_L_a": float(np.mean([r["L_a"] for r in tail])) if tail else None,
        "train_seconds": report.wall_clock,
        "seconds": time.perf_counter() - start,
        "checkpoint": report.checkpoint,
    }
    if cache is not None:
        cache.mkdir(parents=True, exist_ok=True)
        tmp = cache / f"cell-{key}.json.tmp"
        tmp.write_text(json.dumps(doc, indent=1))
        tmp.replace(cache / f"cell-{key}.json")
    return doc


def _run_star(args):
    return run_cell(*args)


def run_grid(cells: list[CellConfig], workers: int = 1, cache_dir=None, out_dir=None) -> list[dict]:
    """Run cells in a process pool; results come back in input order."""
    jobs = [(c, cache_dir, out_dir) for c in cells]
    if workers <= 1 or len(cells) <= 1:
        return [_run_star(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(cells))) as pool:
        return list(pool.map(_run_star, jobs))


def grid(scenarios: Iterable[str], betas: Iterable[float], modes: Iterable[str], base: CellConfig) -> list[CellConfig]:
    return [replace(base, scenario=s, beta=float(b), mode=m)
            for s in scenarios for b in sorted(betas) for m in modes]


def pooled_std(a: dict, b: dict) -> float:
    return float(np.sqrt((a["std"] ** 2 + b["std"] ** 2) / 2.0))


def default_cache_dir() -> Path:
    return Path(os.environ.get("MGM_OUTPUT_ROOT", "mgm-output")) / "cache"
