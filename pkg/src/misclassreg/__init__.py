"""Maximum likelihood Poisson regression with a misclassified binary exposure."""

__version__ = "0.1.0"
