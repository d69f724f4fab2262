"""Synthetic-benchmark 3D referential grounding with progressive
binary-to-n-ary relational learning."""

__version__ = "0.1.0"
