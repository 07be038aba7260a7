"""Solvers and simulators for linear-quadratic mean field games with Markov-chain common noise."""

from __future__ import annotations

__version__ = "0.1.0"
