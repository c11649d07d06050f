"""Exit times of Gauss-Markov processes under inverse-subordinator time changes."""

__version__ = "0.1.0"
