"""Monge-Ampere spline collocation solver and free-form reflector design."""

__version__ = "0.1.0"
