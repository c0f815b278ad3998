"""Action-controllable factorization: learn independently controllable latents from pixels."""

__version__ = "0.1.0"
