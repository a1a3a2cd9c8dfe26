"""Controllable multi-attribute text rewriting."""
