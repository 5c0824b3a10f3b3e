"""Multi-stage trajectory design for UAV sensing and downlink communication."""

__version__ = "0.1.0"
