"""Mission planning for robot teams on maps with uncertain landmark positions and classes."""

__version__ = "0.1.0"
