"""Cohort construction, neural risk screening, and evaluation for severe
mental illness from longitudinal claims/EHR-style event tables."""

__version__ = "0.1.0"
