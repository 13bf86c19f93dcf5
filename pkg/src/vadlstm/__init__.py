"""Bi-directional ConvLSTM auto-encoder for video anomaly detection."""

__all__ = [
    "acceptance",
    "attention",
    "cells",
    "cli",
    "const",
    "data",
    "exceptions",
    "losses",
    "model",
    "network",
    "scoring",
    "trainer",
    "utils",
    "verify",
]
