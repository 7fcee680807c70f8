"""Cold atomic clouds crossing a red-detuned Gaussian beam used as an atom lens."""

__version__ = "0.1.0"
