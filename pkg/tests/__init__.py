"""Tests for the certirand lab."""
