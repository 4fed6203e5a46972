"""WGAN-GP critic and generator losses, with the gradient penalty computed by
double backprop.

A critic is any callable mapping a [batch, d] Tensor to [batch, 1] scores.
For a conditional critic the condition columns are appended to the sample
columns before the call, i.e. the critic sees ``(y, c)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Tensor

Critic = Callable[[Tensor], Tensor]


@dataclass(frozen=True)
class GpConfig:
    lam: float = 0.1
    interpolate: bool = True
    # differentiate w.r.t. (y, c) jointly instead of y alone
    penalize_condition: bool = False

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"gradient penalty weight must be >= 0, got {self.lam}")


def _data(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _with_cond(x, cond) -> Tensor:
    x = x if isinstance(x, Tensor) else Tensor(x)
    if cond is None:
        return x
    return ad.concat_cols([x, cond if isinstance(cond, Tensor) else Tensor(cond)])


def _split_cond(cond):
    if cond is None:
        return None, None
    if isinstance(cond, tuple):
        return _data(cond[0]), _data(cond[1])
    c = _data(cond)
    return c, c


def gradient_penalty(critic: Critic, real, fake, cond=None, cfg: GpConfig = GpConfig(), rng=None) -> Tensor:
    """mean((||grad C(x_hat)||_2 - 1)^2) at interpolates of real and fake rows.

    ``cond`` is one condition matrix shared by both batches, or a
    ``(real_cond, fake_cond)`` pair.  Interpolation weights are drawn once
    per sample.  The result stays attached to the critic parameters.
    """
    real, fake = _data(real), _data(fake)
    if real.shape != fake.shape:
        raise DimensionError(f"real batch {real.shape} and fake batch {fake.shape} differ")
    if real.ndim != 2 or real.shape[0] == 0:
        raise ValueError(f"gradient penalty needs a non-empty [batch, d] batch, got {real.shape}")
    c_real, c_fake = _split_cond(cond)
    n = real.shape[0]
    if cfg.interpolate:
        rng = np.random.default_rng(rng)
        eps = rng.uniform(0.0, 1.0, size=(n, 1))
    else:
        eps = np.ones((n, 1))
    y_hat = eps * real + (1.0 - eps) * fake
    if c_real is None:
        x_hat = Tensor(y_hat, requires_grad=True)
        wrt = x_hat
    elif cfg.penalize_condition:
        c_hat = eps * c_real + (1.0 - eps) * c_fake
        x_hat = Tensor(np.concatenate([y_hat, c_hat], axis=1), requires_grad=True)
        wrt = x_hat
    else:
        c_hat = eps * c_real + (1.0 - eps) * c_fake
        wrt = Tensor(y_hat, requires_grad=True)
        x_hat = ad.concat_cols([wrt, Tensor(c_hat)])
    scores = critic(x_hat)
    (g,) = ad.grad(ad.sum_all(scores), [wrt], create_graph=True)
    return ad.mean(ad.square(ad.add(ad.l2_norm_rows(g), -1.0)))


def critic_loss(critic: Critic, real, fake, cond=None, cfg: GpConfig = GpConfig(), rng=None) -> Tensor:
    """E_fake[C] - E_real[C] + lam * GP; the fake batch is treated as data."""
    c_real, c_fake = _split_cond(cond)
    real_d, fake_d = _data(real), _data(fake)
    w = ad.sub(ad.mean(critic(_with_cond(fake_d, c_fake))), ad.mean(critic(_with_cond(real_d, c_real))))
    if cfg.lam == 0.0:
        return w
    gp = gradient_penalty(critic, real_d, fake_d, cond, cfg, rng)
    return ad.add(w, ad.scale(gp, cfg.lam))


def generator_loss(critic: Critic, fake: Tensor, cond=None) -> Tensor:
    """-E[C(fake)]; gradients reach whatever produced ``fake``."""
    return ad.neg(ad.mean(critic(_with_cond(fake, cond))))
