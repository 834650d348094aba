"""Tucker decomposition with a fixed-point accelerator model."""

__version__ = "0.1.0"
