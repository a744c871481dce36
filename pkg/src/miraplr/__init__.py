"""Joint period and period-luminosity estimation for multi-band light curves."""
__version__ = "0.1.0"
