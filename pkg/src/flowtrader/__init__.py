"""Order-flow-imbalance features, alpha models, and trading agents for LOB data."""

__version__ = "0.1.0"
