"""Deadline/budget-constrained parameter-sweep broker for a simulated grid."""

__version__ = "0.1.0"
