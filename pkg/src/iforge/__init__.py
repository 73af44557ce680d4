"""iforge: barrier-certificate synthesis and QP safety filtering for LK/ACC."""

__version__ = "0.1.0"
