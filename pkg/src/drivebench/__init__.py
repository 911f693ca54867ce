"""Closed-loop motion-planning benchmark on procedurally generated
long-tail driving scenarios."""

__version__ = "0.1.0"
