"""milltwin: digital twin for a retrofitted legacy milling machine."""

__version__ = "0.1.0"
