"""Multilayer Doyle-Fuller-Newman half-cell simulator and bilayer electrode design tools."""
__version__ = "0.1.0"
