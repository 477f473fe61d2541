"""trimlab: trimmed/truncated Birkhoff sums over spectral-gap interval maps."""

__version__ = "0.1.0"
