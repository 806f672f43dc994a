"""Risk-adaptive CBF safety filtering with latency-aware alpha fusion."""

__version__ = "0.1.0"
