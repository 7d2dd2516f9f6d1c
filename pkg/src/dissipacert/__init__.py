"""Data-driven stability certificates for networks of homogeneous subsystems."""

__version__ = "0.1.0"
