"""Fixed, precommitted and nested CVaR on finite-horizon tabular MDPs."""

__version__ = "0.1.0"
