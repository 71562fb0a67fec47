"""Rescaled sandwiched Renyi divergences and the information geometry they induce."""

__version__ = "0.1.0"
