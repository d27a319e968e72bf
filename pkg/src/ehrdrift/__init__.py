"""Temporal-drift evaluation of clinical predictors on synthetic EHR cohorts."""

__version__ = "0.1.0"
