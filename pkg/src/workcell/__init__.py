"""Hardware-abstracted simulated robot workcell framework."""

__version__ = "0.1.0"
