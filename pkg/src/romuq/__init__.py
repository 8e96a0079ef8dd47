"""Parametrised reduced-order modelling toolkit: VAE compression, latent
transformer forecasting, ensemble uncertainty quantification and
uncertainty-driven adaptive sampling."""

__version__ = "0.1.0"
