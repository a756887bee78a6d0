"""Utility helpers shared across the design tool."""
