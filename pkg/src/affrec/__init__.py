"""Context-conditioned affordance reasoning for point-of-interest recommendation."""

__version__ = "0.1.0"
