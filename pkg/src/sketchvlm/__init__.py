"""Multimodal toolkit for parametric CAD sketch autocompletion and autoconstraint."""

__version__ = "0.1.0"
