"""Distilled isolation-forest whitelisting for burst-level traffic features."""

__version__ = "0.1.0"
