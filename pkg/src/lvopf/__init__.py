"""Unbalanced optimal power flow for PV-rich low-voltage feeders."""
__version__ = "0.1.0"
