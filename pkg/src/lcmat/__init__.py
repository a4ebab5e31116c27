"""Loss-curvature matching for coreset selection and dataset condensation."""

__version__ = "0.1.0"
