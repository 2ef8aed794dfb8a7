"""Shared utilities: bit strings, random streams, finite fields, logging."""
