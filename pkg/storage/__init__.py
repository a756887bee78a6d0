"""Persistence helpers: atomic JSON/CSV files and the expectation-factor cache."""
