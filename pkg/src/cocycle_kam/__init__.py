"""Quasi-periodic SL(2,R) cocycles: KAM reduction, spectral diagnostics and a CLI."""
__version__ = "0.1.0"
