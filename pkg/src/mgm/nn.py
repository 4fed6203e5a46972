"""Multilayer perceptrons, Adam, and JSON checkpoints."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Tensor

CHECKPOINT_FORMAT = "mgm-mlp-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class MlpConfig:
    input_dim: int
    output_dim: int
    hidden: tuple[int, ...] = (512, 512, 512)
    slope: float = 0.2
    final_linear: bool = True

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError(f"MLP dims must be >= 1, got {self.input_dim} -> {self.output_dim}")
        if not self.hidden or min(self.hidden) < 1:
            raise ValueError(f"hidden widths must be a non-empty list of positive ints, got {self.hidden}")
        if not 0.0 < self.slope < 1.0:
            raise ValueError(f"leaky slope must lie in (0, 1), got {self.slope}")

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        dims = [self.input_dim, *self.hidden, self.output_dim]
        return list(zip(dims[:-1], dims[1:]))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MlpConfig":
        return cls(**{**d, "hidden": tuple(d["hidden"])})


@dataclass
class MlpParams:
    """Per-layer (weight, bias) leaf tensors; weights are [fan_in, fan_out]."""

    weights: list[Tensor]
    biases: list[Tensor]

    def tensors(self) -> list[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def arrays(self) -> list[np.ndarray]:
        return [t.data for t in self.tensors()]

    def copy(self, requires_grad: bool | None = None) -> "MlpParams":
        def clone(t):
            rg = t.requires_grad if requires_grad is None else requires_grad
            return Tensor(t.data.copy(), requires_grad=rg)
        return MlpParams([clone(w) for w in self.weights], [clone(b) for b in self.biases])

    def check(self, config: MlpConfig) -> None:
        if len(self.weights) != len(config.layer_dims):
            raise DimensionError(f"expected {len(config.layer_dims)} layers, got {len(self.weights)}")
        for i, ((fi, fo), w, b) in enumerate(zip(config.layer_dims, self.weights, self.biases)):
            if w.shape != (fi, fo) or b.shape != (fo,):
                raise DimensionError(f"layer {i}: weight {w.shape} / bias {b.shape}, expected ({fi}, {fo}) / ({fo},)")


def init_params(config: MlpConfig, seed, requires_grad: bool = True) -> MlpParams:
    """He-uniform weights for leaky units, zero biases.

    Weights are U(-b, b) with b = sqrt(6 / ((1 + slope**2) * fan_in)), giving
    variance 2 / ((1 + slope**2) * fan_in).
    """
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in config.layer_dims:
        bound = math.sqrt(6.0 / ((1.0 + config.slope ** 2) * fan_in))
        weights.append(Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)), requires_grad))
        biases.append(Tensor(np.zeros(fan_out), requires_grad))
    return MlpParams(weights, biases)


def forward(params: MlpParams, config: MlpConfig, x) -> Tensor:
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.data.ndim != 2 or x.shape[1] != config.input_dim:
        raise DimensionError(f"MLP expects input [batch, {config.input_dim}], got {x.shape}")
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = ad.add_rowvec(ad.matmul(h, w), b)
        if i < last or not config.final_linear:
            h = ad.leaky_relu(h, config.slope)
    return h


class Mlp:
    """A config bound to its parameters; calling it runs ``forward``."""

    def __init__(self, config: MlpConfig, params: MlpParams):
        params.check(config)
        self.config = config
        self.params = params

    @classmethod
    def init(cls, config: MlpConfig, seed, requires_grad: bool = True) -> "Mlp":
        return cls(config, init_params(config, seed, requires_grad))

    def __call__(self, x) -> Tensor:
        return forward(self.params, self.config, x)

    def parameters(self) -> list[Tensor]:
        return self.params.tensors()

    def frozen(self) -> "Mlp":
        """A copy whose parameters are constants (no gradients recorded)."""
        return Mlp(self.config, self.params.copy(requires_grad=False))

    def copy(self) -> "Mlp":
        return Mlp(self.config, self.params.copy())


# ---------------------------------------------------------------------- Adam

@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.9
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: Sequence[Tensor], lr=1e-4, beta1=0.5, beta2=0.9, eps=1e-8) -> "AdamState":
        return cls(lr=lr, beta1=beta1, beta2=beta2, eps=eps,
                   m=[np.zeros(p.shape) for p in params], v=[np.zeros(p.shape) for p in params])


def adam_step(params: Sequence[Tensor], grads: Sequence, state: AdamState) -> AdamState:
    """Bias-corrected Adam update, applied in place to ``params``."""
    params = list(params)
    grads = [g.data if isinstance(g, Tensor) else np.asarray(g, dtype=np.float64) for g in grads]
    if len(grads) != len(params):
        raise DimensionError(f"{len(grads)} gradients for {len(params)} parameters")
    if not state.m:
        state.m = [np.zeros(p.shape) for p in params]
        state.v = [np.zeros(p.shape) for p in params]
    for i, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.shape:
            raise DimensionError(f"gradient {i} has shape {g.shape}, parameter has {p.shape}")
        if not np.isfinite(g).all():
            kind = "weight" if i % 2 == 0 else "bias"
            raise ad.NonFiniteError(f"non-finite gradient for layer {i // 2} {kind} (parameter {i})")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data = p.data - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state


# --------------------------------------------------------------- checkpoints

def _net_doc(net: Mlp) -> dict:
    return {
        "config": net.config.to_dict(),
        "layers": [{"weight": w.data.tolist(), "bias": b.data.tolist()}
                   for w, b in zip(net.params.weights, net.params.biases)],
    }


def _net_from_doc(doc: dict, requires_grad: bool) -> Mlp:
    config = MlpConfig.from_dict(doc["config"])
    layers = doc["layers"]
    if len(layers) != len(config.layer_dims):
        raise ValueError(f"checkpoint has {len(layers)} layers, config needs {len(config.layer_dims)}")
    weights = [Tensor(np.array(l["weight"], dtype=np.float64).reshape(fi, fo), requires_grad)
               for l, (fi, fo) in zip(layers, config.layer_dims)]
    biases = [Tensor(np.array(l["bias"], dtype=np.float64).reshape(fo), requires_grad)
              for l, (_, fo) in zip(layers, config.layer_dims)]
    return Mlp(config, MlpParams(weights, biases))


def save_checkpoint(path, networks, **metadata) -> Path:
    """Write a versioned JSON checkpoint holding one or more named networks.

    ``networks`` is an ``Mlp`` (stored as "generator") or a name -> Mlp dict.
    Floats are written with Python's shortest round-trip repr (at most 17
    significant digits), so loading is bit-exact.
    """
    if isinstance(networks, Mlp):
        networks = {"generator": networks}
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "metadata": metadata,
        "networks": {name: _net_doc(net) for name, net in networks.items()},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(doc, allow_nan=False))
    tmp.replace(path)
    return path


def load_checkpoint(path, requires_grad: bool = True) -> tuple[dict[str, Mlp], dict]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not an MLP checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    nets = {name: _net_from_doc(d, requires_grad) for name, d in doc["networks"].items()}
    return nets, doc["metadata"]
