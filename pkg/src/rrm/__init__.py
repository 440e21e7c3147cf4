"""Daily VaR and ES from intraday returns via subordinated-time scaling."""

__version__ = "0.1.0"
