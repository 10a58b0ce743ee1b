"""stirapkit: simulation, pulse design and optimal control for STIRAP and geometric gates."""

__version__ = "0.1.0"
