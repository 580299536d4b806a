"""Classical numerical core of a face reenactment and swapping pipeline."""

__version__ = "0.1.0"
