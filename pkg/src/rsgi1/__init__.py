"""Large-deviations toolkit for the RS/GI/1 transitory queue."""

__version__ = "0.1.0"
