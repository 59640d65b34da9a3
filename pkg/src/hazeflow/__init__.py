"""Non-homogeneous haze synthesis and flow-based single-image dehazing (numpy reference)."""

__version__ = "0.1.0"
