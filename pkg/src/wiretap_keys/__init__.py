"""Secret-key agreement over Gaussian and quasi-static fading wiretap channels."""

__version__ = "0.1.0"
