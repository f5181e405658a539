"""Class-conditional alias-free generator trained against projected discriminators."""

__version__ = "0.1.0"
