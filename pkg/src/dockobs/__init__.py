"""Toolkit for augmenting Dockerized Java services with observability and
fault injection, and for analyzing the resilience experiments that follow."""

__version__ = "0.1.0"
