"""snapgap: label high-poverty, low-benefit-uptake ZIPs and backtest
interpretable classifiers that predict them out-of-time."""

__version__ = "0.1.0"
