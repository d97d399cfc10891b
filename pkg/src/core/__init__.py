"""Geometry, value types and vanishing-point primitives."""
