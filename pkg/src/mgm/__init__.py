"""Agent GANs trained with feedback from a pre-trained conditional mixer GAN,
with exact Wasserstein-1 evaluation and finite-system checks of the
transport identities behind the feedback."""

from .autodiff import DimensionError, NonFiniteError, Tensor, grad
from .estimators import ConditionalWGANGP, MGMAgentGAN, WGANGP

__version__ = "0.1.0"

__all__ = ["ConditionalWGANGP", "DimensionError", "MGMAgentGAN", "NonFiniteError", "Tensor", "WGANGP", "grad"]
