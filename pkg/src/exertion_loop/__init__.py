"""Simulated human-in-the-loop assistance control for a motorized wheelchair."""

__version__ = "0.1.0"
