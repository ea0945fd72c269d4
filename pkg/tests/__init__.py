"""Test package for facefill."""
