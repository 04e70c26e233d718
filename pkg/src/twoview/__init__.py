"""Common and individual structure of paired two-view data."""

__version__ = "0.1.0"
