"""Exact hypothesis-class checks and Dyna-style agents."""
