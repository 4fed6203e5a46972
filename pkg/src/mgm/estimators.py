"""scikit-learn style wrappers around the GAN trainers.

Generative models have no ``transform``; ``sample`` draws new rows and
``predict`` (conditional model only) draws one output per condition row.
``score`` returns the negative W1 to a reference cloud so that higher is
better, as scikit-learn expects.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from . import seeding
from .ot import w1_empirical
from .training import GanHyper, MgmSetup, mixer_hyper, pretrain_mixer, train_agent


class _GanParams(BaseEstimator):
    def _hyper(self, lam: float) -> GanHyper:
        return GanHyper(noise_dim=self.noise_dim, hidden=tuple(self.hidden), slope=self.slope, lr=self.lr,
                        batch=self.batch_size, n_critic=self.n_critic, iters=self.n_iter, lam=lam)

    def _draw_rng(self, random_state):
        if random_state is None:
            return seeding.rng(self.random_state, "estimator", "sample")
        return np.random.default_rng(random_state)

    def score(self, X, y=None) -> float:
        """-W1 between ``len(X)`` fresh samples and ``X``."""
        X = check_array(X, dtype=np.float64)
        return -w1_empirical(self.sample(len(X)), X)


class MGMAgentGAN(_GanParams):
    """Agent generator trained on its own rows, optionally with mixer feedback.

    ``fit(X, others=[...], outputs=Y, mixer=m)``.  ``X`` holds the agent's
    rows, ``others`` the real rows of every other agent (position order,
    the agent's own slot ``i0`` left out), ``outputs`` the real system outputs.
    """

    def __init__(self, mode: str = "baseline", alpha: float = 0.5, i0: int = 0, noise_dim: int = 2,
                 hidden=(512, 512, 512), slope: float = 0.2, lr: float = 1e-4, batch_size: int = 256,
                 n_critic: int = 5, n_iter: int = 20_000, lam: float = 0.1, lam_mix: float = 1.0,
                 feedback_critic: str = "fresh", random_state: int = 0):
        self.mode = mode
        self.alpha = alpha
        self.i0 = i0
        self.noise_dim = noise_dim
        self.hidden = hidden
        self.slope = slope
        self.lr = lr
        self.batch_size = batch_size
        self.n_critic = n_critic
        self.n_iter = n_iter
        self.lam = lam
        self.lam_mix = lam_mix
        self.feedback_critic = feedback_critic
        self.random_state = random_state

    def fit(self, X, y=None, others=(), outputs=None, mixer=None):
        X = check_array(X, dtype=np.float64)
        others = [check_array(o, dtype=np.float64) for o in others]
        if outputs is not None:
            outputs = check_array(outputs, dtype=np.float64)
        setup = MgmSetup(X, others=others, outputs=outputs, mixer=mixer, i0=self.i0, mode=self.mode,
                         alpha=self.alpha, hyper=self._hyper(self.lam), lam_mix=self.lam_mix,
                         feedback_critic=self.feedback_critic)
        self.trainer_, self.report_ = train_agent(setup, seed=self.random_state)
        self.n_features_in_ = X.shape[1]
        return self

    def sample(self, n_samples: int, random_state=None) -> np.ndarray:
        check_is_fitted(self, "trainer_")
        return self.trainer_.sample(n_samples, self._draw_rng(random_state))


class WGANGP(MGMAgentGAN):
    """Plain unconditional WGAN-GP (an agent without feedback)."""

    def __init__(self, noise_dim: int = 2, hidden=(512, 512, 512), slope: float = 0.2, lr: float = 1e-4,
                 batch_size: int = 256, n_critic: int = 5, n_iter: int = 20_000, lam: float = 0.1,
                 random_state: int = 0):
        super().__init__(mode="baseline", noise_dim=noise_dim, hidden=hidden, slope=slope, lr=lr,
                         batch_size=batch_size, n_critic=n_critic, n_iter=n_iter, lam=lam,
                         random_state=random_state)

    def fit(self, X, y=None):
        return super().fit(X)


class ConditionalWGANGP(_GanParams):
    """Conditional WGAN-GP: ``fit(X_conditions, Y_outputs)``, ``predict(X)`` samples Y | X."""

    def __init__(self, noise_dim: int = 2, hidden=(512, 512, 512), slope: float = 0.2, lr: float = 1e-4,
                 batch_size: int = 256, n_critic: int = 5, n_iter: int = 20_000, lam: float = 1.0,
                 penalize_condition: bool = True, random_state: int = 0):
        self.noise_dim = noise_dim
        self.hidden = hidden
        self.slope = slope
        self.lr = lr
        self.batch_size = batch_size
        self.n_critic = n_critic
        self.n_iter = n_iter
        self.lam = lam
        self.penalize_condition = penalize_condition
        self.random_state = random_state

    def fit(self, X, y):
        X = check_array(X, dtype=np.float64)
        y = check_array(y, dtype=np.float64)
        if len(X) != len(y):
            raise ValueError(f"X has {len(X)} rows but y has {len(y)}")
        hyper = mixer_hyper(**{**self._hyper(self.lam).to_dict(), "hidden": tuple(self.hidden)})
        self.mixer_ = pretrain_mixer(X, y, hyper, seed=self.random_state, penalize_condition=self.penalize_condition)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X, random_state=None) -> np.ndarray:
        check_is_fitted(self, "mixer_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, model was fitted with {self.n_features_in_}")
        return self.mixer_.sample(X, self._draw_rng(random_state))

    def sample(self, n_samples: int, random_state=None):
        raise NotImplementedError("a conditional model samples through predict(X)")

    def score(self, X, y=None) -> float:
        """-W1 between (X, predict(X)) and (X, y) joint clouds."""
        X = check_array(X, dtype=np.float64)
        y = check_array(y, dtype=np.float64)
        return -w1_empirical(np.hstack([X, self.predict(X)]), np.hstack([X, y]))
