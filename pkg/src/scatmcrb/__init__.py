"""Localization bounds under scattering-model misspecification."""

__version__ = "0.1.0"
