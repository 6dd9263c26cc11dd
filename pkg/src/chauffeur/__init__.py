"""Desk-scale closed-loop driving planner workbench."""

__version__ = "0.1.0"
