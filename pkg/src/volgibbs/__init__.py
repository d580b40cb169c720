"""Pseudo-Gibbs VAE imputation of swaption volatility cubes with shifted-SABR tools."""

__version__ = "0.1.0"
