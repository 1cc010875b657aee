"""Monte Carlo solver and weak-form verifier for nonlocal complement value problems."""
__version__ = "0.1.0"
