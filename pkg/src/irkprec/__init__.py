"""Block preconditioners for implicit Runge-Kutta stage systems of 2D parabolic problems."""

__version__ = "0.1.0"
