"""Chaos-engineering harness for evaluating self-healing microservice managers."""

__version__ = "0.1.0"
