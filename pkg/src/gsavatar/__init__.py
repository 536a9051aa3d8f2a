"""Feed-forward canonical Gaussian avatars: reconstruction, animation, serving."""

__version__ = "0.1.0"
