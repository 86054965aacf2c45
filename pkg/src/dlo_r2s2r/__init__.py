"""Real2Sim2Real DLO manipulation pipeline."""

__version__ = "0.1.0"
