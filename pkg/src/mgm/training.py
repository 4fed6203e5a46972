"""Mixer pre-training and agent training with mixer feedback.

The agent loop follows the MGM template: ``n_critic`` critic updates (the
agent critic on agent samples, and in feedback modes the mixer-side critic on
mixer outputs), then one generator update driven by the agent loss ``L_a``,
the feedback loss ``L_f``, or both.

Randomness is split into named streams (see :mod:`mgm.seeding`).  Everything
the baseline consumes comes from the "agent" streams; the feedback machinery
draws only from "feedback" streams.  So a feedback run whose feedback weight
is zero replays the baseline bit for bit.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from . import seeding
from .autodiff import NonFiniteError, Tensor
from .nn import AdamState, Mlp, MlpConfig, adam_step, load_checkpoint, save_checkpoint
from .wgan import GpConfig, critic_loss, generator_loss

log = logging.getLogger(__name__)

MODES = ("baseline", "combined", "alternate")


class ConfigurationError(ValueError):
    pass


class TrainingDiverged(FloatingPointError):
    def __init__(self, message: str, iteration: int, checkpoint: str | None):
        super().__init__(message)
        self.iteration = iteration
        self.checkpoint = checkpoint


@dataclass(frozen=True)
class GanHyper:
    noise_dim: int = 2
    hidden: tuple[int, ...] = (512, 512, 512)
    slope: float = 0.2
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.9
    batch: int = 256
    n_critic: int = 5
    iters: int = 20_000
    lam: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        for name in ("noise_dim", "batch", "n_critic"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if self.iters < 0 or self.lr < 0 or self.lam < 0:
            raise ConfigurationError("iters, lr and lam must be non-negative")

    def adam(self, params) -> AdamState:
        return AdamState.for_params(params, lr=self.lr, beta1=self.beta1, beta2=self.beta2)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


def _sample_rows(data: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    return data[rng.integers(0, len(data), size=k)]


def _check_finite_loss(value: float, what: str) -> None:
    if not np.isfinite(value):
        raise NonFiniteError(f"{what} is not finite")


# --------------------------------------------------------------------- mixer

@dataclass
class Mixer:
    """Conditional generator G(z, x) -> y with its critic C(y, x)."""

    generator: Mlp
    critic: Mlp
    noise_dim: int
    meta: dict = field(default_factory=dict)

    @property
    def cond_dim(self) -> int:
        return self.generator.config.input_dim - self.noise_dim

    @property
    def out_dim(self) -> int:
        return self.generator.config.output_dim

    def generate(self, cond, rng) -> Tensor:
        """Outputs for each condition row; stays on the graph if ``cond`` does."""
        cond = cond if isinstance(cond, Tensor) else Tensor(cond)
        z = np.random.default_rng(rng).standard_normal((cond.shape[0], self.noise_dim))
        return self.generator(ad.concat_cols([Tensor(z), cond]))

    def sample(self, cond, rng=None) -> np.ndarray:
        with ad.no_grad():
            return self.generate(np.asarray(cond, dtype=np.float64), rng).data

    def save(self, path, **extra) -> Path:
        return save_checkpoint(path, {"generator": self.generator, "critic": self.critic},
                               role="mixer", noise_dim=self.noise_dim, **{**self.meta, **extra})

    @classmethod
    def load(cls, path) -> "Mixer":
        nets, meta = load_checkpoint(path)
        if meta.get("role") != "mixer":
            raise ConfigurationError(f"{path} is not a mixer checkpoint")
        return cls(nets["generator"], nets["critic"], int(meta["noise_dim"]), meta)


def mixer_hyper(**overrides) -> GanHyper:
    return replace(GanHyper(lam=1.0), **overrides)


def pretrain_mixer(conditions, outputs, hyper: GanHyper | None = None, seed: int = 0,
                   penalize_condition: bool = True, checkpoint: str | Path | None = None,
                   log_every: int = 0) -> Mixer:
    """Conditional WGAN-GP on paired (condition, output) rows.

    The critic scores ``(y, x)``.  With ``penalize_condition`` the gradient
    penalty differentiates w.r.t. both, which suits continuous conditions.
    """
    hyper = hyper or mixer_hyper()
    conditions = np.asarray(conditions, dtype=np.float64)
    outputs = np.asarray(outputs, dtype=np.float64)
    if conditions.ndim != 2 or outputs.ndim != 2 or len(conditions) != len(outputs):
        raise ad.DimensionError(f"paired data mismatch: conditions {conditions.shape}, outputs {outputs.shape}")
    if len(outputs) == 0:
        raise ConfigurationError("mixer data is empty")
    dc, dy = conditions.shape[1], outputs.shape[1]
    gen = Mlp.init(MlpConfig(hyper.noise_dim + dc, dy, hyper.hidden, hyper.slope), seeding.derive(seed, "mixer", "generator"))
    crit = Mlp.init(MlpConfig(dy + dc, 1, hyper.hidden, hyper.slope), seeding.derive(seed, "mixer", "critic"))
    mixer = Mixer(gen, crit, hyper.noise_dim, {"seed": seed, "hyper": hyper.to_dict(),
                                                "penalize_condition": penalize_condition})
    rng = seeding.rng(seed, "mixer", "sampling")
    opt_g, opt_c = hyper.adam(gen.parameters()), hyper.adam(crit.parameters())
    cfg = GpConfig(lam=hyper.lam, penalize_condition=penalize_condition)
    k = hyper.batch
    for it in range(hyper.iters):
        for _ in range(hyper.n_critic):
            idx = rng.integers(0, len(outputs), size=k)
            c = conditions[idx]
            with ad.no_grad():
                fake = mixer.generate(c, rng).data
            loss = critic_loss(crit, outputs[idx], fake, cond=c, cfg=cfg, rng=rng)
            _check_finite_loss(loss.item(), "mixer critic loss")
            adam_step(crit.parameters(), ad.grad(loss, crit.parameters()), opt_c)
        c = conditions[rng.integers(0, len(outputs), size=k)]
        gloss = generator_loss(crit, mixer.generate(c, rng), cond=c)
        adam_step(gen.parameters(), ad.grad(gloss, gen.parameters()), opt_g)
        if log_every and (it + 1) % log_every == 0:
            log.info("mixer iter %d: critic %.5f generator %.5f", it + 1, loss.item(), gloss.item())
    mixer.meta["iteration"] = hyper.iters
    if checkpoint is not None:
        mixer.save(checkpoint)
    return mixer


# --------------------------------------------------------------------- agent

@dataclass
class MgmSetup:
    """Everything needed to train the generator of agent ``i0``.

    ``others`` holds the real data of the remaining agents in position order
    (position ``i0`` skipped).  ``outputs`` is the real mixer-output data.
    ``output_conditions`` (rows paired with ``outputs``) is only needed when
    the feedback critic is warm-started from the conditional mixer critic.
    """

    agent_data: np.ndarray
    others: Sequence[np.ndarray] = ()
    outputs: np.ndarray | None = None
    mixer: Mixer | None = None
    i0: int = 0
    mode: str = "baseline"
    alpha: float = 0.5
    hyper: GanHyper = field(default_factory=GanHyper)
    lam_mix: float = 1.0
    # alternate mode: this many L_a generator steps, then this many L_f steps
    cadence: tuple[int, int] = (1, 1)
    feedback_critic: str = "fresh"
    output_conditions: np.ndarray | None = None

    def __post_init__(self):
        self.agent_data = np.asarray(self.agent_data, dtype=np.float64)
        self.others = [np.asarray(o, dtype=np.float64) for o in self.others]
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigurationError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.agent_data.ndim != 2 or len(self.agent_data) == 0:
            raise ConfigurationError("agent data must be a non-empty [n, d] array")
        if self.feedback_critic not in ("fresh", "warm"):
            raise ConfigurationError(f"feedback_critic must be 'fresh' or 'warm', got {self.feedback_critic!r}")
        if len(self.cadence) != 2 or min(self.cadence) < 0 or sum(self.cadence) == 0:
            raise ConfigurationError(f"bad alternate cadence {self.cadence}")
        if self.uses_feedback:
            if self.mixer is None:
                raise ConfigurationError(f"mode {self.mode!r} needs a pre-trained mixer")
            if self.outputs is None or len(self.outputs) == 0:
                raise ConfigurationError("feedback modes need real mixer-output data")
            if any(len(o) == 0 for o in self.others):
                raise ConfigurationError("other agents' datasets must be non-empty")
            self.outputs = np.asarray(self.outputs, dtype=np.float64)
            widths = [o.shape[1] for o in self.others]
            widths.insert(self.i0, self.agent_data.shape[1])
            if sum(widths) != self.mixer.cond_dim:
                raise ConfigurationError(f"agent widths {widths} do not add up to the mixer condition width {self.mixer.cond_dim}")
            if self.outputs.shape[1] != self.mixer.out_dim:
                raise ConfigurationError("output data width does not match the mixer")
            if self.feedback_critic == "warm" and self.output_conditions is None:
                raise ConfigurationError("a warm feedback critic needs output_conditions")

    @property
    def uses_feedback(self) -> bool:
        return self.mode != "baseline"

    @property
    def n_agents(self) -> int:
        return len(self.others) + 1


@dataclass
class TrainReport:
    seed: int
    mode: str
    records: list[dict] = field(default_factory=list)
    wall_clock: float = 0.0
    checkpoint: str | None = None

    def column(self, key: str) -> np.ndarray:
        return np.array([np.nan if r[key] is None else r[key] for r in self.records])


class MgmTrainer:
    """Holds the networks, optimizers and random streams of one agent run."""

    def __init__(self, setup: MgmSetup, seed: int):
        self.setup = setup
        self.seed = seed
        h = setup.hyper
        d = setup.agent_data.shape[1]
        self.generator = Mlp.init(MlpConfig(h.noise_dim, d, h.hidden, h.slope), seeding.derive(seed, "agent", "generator"))
        self.critic = Mlp.init(MlpConfig(d, 1, h.hidden, h.slope), seeding.derive(seed, "agent", "critic"))
        self.opt_g = h.adam(self.generator.parameters())
        self.opt_c = h.adam(self.critic.parameters())
        self.rng = seeding.rng(seed, "agent", "sampling")
        self.gp_agent = GpConfig(lam=h.lam)
        self.mixer_gen = None
        self.fb_critic = None
        if setup.uses_feedback:
            self.mixer_gen = setup.mixer.generator.frozen()
            if setup.feedback_critic == "warm":
                self.fb_critic = setup.mixer.critic.copy()
                self.gp_fb = GpConfig(lam=setup.lam_mix, penalize_condition=True)
            else:
                cfg = MlpConfig(setup.mixer.out_dim, 1, h.hidden, h.slope)
                self.fb_critic = Mlp.init(cfg, seeding.derive(seed, "feedback", "critic"))
                self.gp_fb = GpConfig(lam=setup.lam_mix)
            self.opt_f = h.adam(self.fb_critic.parameters())
            self.fb_rng = seeding.rng(seed, "feedback", "sampling")
        self.iteration = 0

    # -- pieces of the template ------------------------------------------

    def _noise(self, k: int) -> np.ndarray:
        return self.rng.standard_normal((k, self.setup.hyper.noise_dim))

    def assemble(self, x_i0, rng) -> Tensor:
        """<x_-i0 drawn from the real data of the other agents, x_i0>."""
        x_i0 = x_i0 if isinstance(x_i0, Tensor) else Tensor(x_i0)
        k = x_i0.shape[0]
        parts: list[Tensor] = [Tensor(_sample_rows(o, k, rng)) for o in self.setup.others]
        parts.insert(self.setup.i0, x_i0)
        return ad.concat_cols(parts)

    def mixer_outputs(self, x_i0, rng) -> tuple[Tensor, Tensor]:
        """Frozen-mixer outputs for the generated agent samples, and the full condition."""
        x = self.assemble(x_i0, rng)
        z = rng.standard_normal((x.shape[0], self.setup.mixer.noise_dim))
        return self.mixer_gen(ad.concat_cols([Tensor(z), x])), x

    def _fb_score(self, y: Tensor, x: Tensor) -> Tensor:
        if self.setup.feedback_critic == "warm":
            return self.fb_critic(ad.concat_cols([y, x]))
        return self.fb_critic(y)

    def critic_step(self) -> tuple[float, float | None]:
        s, k = self.setup, self.setup.hyper.batch
        z = self._noise(k)
        with ad.no_grad():
            x_fake = self.generator(z).data
        x_real = _sample_rows(s.agent_data, k, self.rng)
        loss_a = critic_loss(self.critic, x_real, x_fake, cfg=self.gp_agent, rng=self.rng)
        _check_finite_loss(loss_a.item(), "agent critic loss")
        adam_step(self.critic.parameters(), ad.grad(loss_a, self.critic.parameters()), self.opt_c)
        if not s.uses_feedback:
            return loss_a.item(), None
        with ad.no_grad():
            y_fake, x_cond = self.mixer_outputs(x_fake, self.fb_rng)
        idx = self.fb_rng.integers(0, len(s.outputs), size=k)
        y_real = s.outputs[idx]
        if s.feedback_critic == "warm":
            cond = (s.output_conditions[idx], x_cond.data)
            loss_f = critic_loss(self.fb_critic, y_real, y_fake.data, cond=cond, cfg=self.gp_fb, rng=self.fb_rng)
        else:
            loss_f = critic_loss(self.fb_critic, y_real, y_fake.data, cfg=self.gp_fb, rng=self.fb_rng)
        _check_finite_loss(loss_f.item(), "feedback critic loss")
        adam_step(self.fb_critic.parameters(), ad.grad(loss_f, self.fb_critic.parameters()), self.opt_f)
        return loss_a.item(), loss_f.item()

    def agent_pass(self, z: np.ndarray) -> tuple[float, list[Tensor]]:
        loss = generator_loss(self.critic, self.generator(z))
        return loss.item(), ad.grad(loss, self.generator.parameters())

    def feedback_pass(self, z: np.ndarray, rng=None) -> tuple[float, list[Tensor]]:
        """L_f = -E[C_f(G_mix(z', <x_-i0, G(z)>))] and its gradient in the agent generator."""
        if not self.setup.uses_feedback:
            raise ConfigurationError("feedback_pass needs a feedback-mode setup with a mixer")
        rng = self.fb_rng if rng is None else np.random.default_rng(rng)
        y, x = self.mixer_outputs(self.generator(z), rng)
        loss = ad.neg(ad.mean(self._fb_score(y, x)))
        return loss.item(), ad.grad(loss, self.generator.parameters())

    def _uses_lf(self, it: int) -> bool:
        a, f = self.setup.cadence
        return it % (a + f) >= a

    def generator_step(self) -> tuple[float, float | None]:
        s = self.setup
        z = self._noise(s.hyper.batch)
        la, ga = self.agent_pass(z)
        if s.mode == "baseline":
            grads, lf = ga, None
        elif s.mode == "combined":
            lf, gf = self.feedback_pass(z)
            grads = [s.alpha * a.data + (1.0 - s.alpha) * f.data for a, f in zip(ga, gf)]
        else:
            lf, gf = self.feedback_pass(z)
            grads = gf if self._uses_lf(self.iteration) else ga
        _check_finite_loss(la, "agent generator loss")
        if lf is not None:
            _check_finite_loss(lf, "feedback loss")
        adam_step(self.generator.parameters(), grads, self.opt_g)
        return la, lf

    def step(self) -> dict:
        wa = wf = None
        for _ in range(self.setup.hyper.n_critic):
            wa, wf = self.critic_step()
        la, lf = self.generator_step()
        self.iteration += 1
        return {"iter": self.iteration, "L_a": la, "L_f": lf, "W_a": wa, "W_f": wf}

    # -- persistence --------------------------------------------------------

    def checkpoint_meta(self) -> dict:
        s = self.setup
        return {"role": "agent", "seed": self.seed, "iteration": self.iteration, "mode": s.mode,
                "alpha": s.alpha, "i0": s.i0, "noise_dim": s.hyper.noise_dim, "hyper": s.hyper.to_dict()}

    def save(self, path) -> Path:
        return save_checkpoint(path, {"generator": self.generator, "critic": self.critic}, **self.checkpoint_meta())

    def sample(self, n: int, rng) -> np.ndarray:
        z = np.random.default_rng(rng).standard_normal((n, self.setup.hyper.noise_dim))
        with ad.no_grad():
            return self.generator(z).data


def train_agent(setup: MgmSetup, seed: int = 0, checkpoint: str | Path | None = None,
                log_path: str | Path | None = None,
                callback: Callable[[MgmTrainer, dict], None] | None = None) -> tuple[MgmTrainer, TrainReport]:
    """Run the template for ``setup.hyper.iters`` generator iterations.

    On a non-finite loss or gradient the last good generator is written next to
    ``checkpoint`` (suffix ``.last_good.json``) and :class:`TrainingDiverged`
    is raised.
    """
    trainer = MgmTrainer(setup, seed)
    report = TrainReport(seed=seed, mode=setup.mode)
    start = time.perf_counter()
    fh = open(log_path, "w") if log_path is not None else None
    try:
        for _ in range(setup.hyper.iters):
            snapshot = [p.data for p in trainer.generator.parameters()]
            try:
                rec = trainer.step()
            except NonFiniteError as exc:
                for p, arr in zip(trainer.generator.parameters(), snapshot):
                    p.data = arr
                path = None
                if checkpoint is not None:
                    path = str(Path(checkpoint).with_suffix(".last_good.json"))
                    trainer.save(path)
                raise TrainingDiverged(f"iteration {trainer.iteration + 1}: {exc}", trainer.iteration, path) from exc
            report.records.append(rec)
            if fh is not None:
                fh.write(json.dumps(rec) + "\n")
            if callback is not None:
                callback(trainer, rec)
    finally:
        if fh is not None:
            fh.close()
    report.wall_clock = time.perf_counter() - start
    if checkpoint is not None:
        report.checkpoint = str(trainer.save(checkpoint))
    return trainer, report


def load_agent_generator(path) -> tuple[Mlp, dict]:
    nets, meta = load_checkpoint(path, requires_grad=False)
    if "generator" not in nets:
        raise ConfigurationError(f"{path} has no generator network")
    return nets["generator"], meta
