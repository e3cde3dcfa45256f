"""Multi-asset market making of SPX and its derivatives under a quadratic rough Heston model."""

__version__ = "0.1.0"
