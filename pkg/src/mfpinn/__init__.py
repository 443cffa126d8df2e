"""Multi-fidelity physics-informed neural networks for 1D transient heat conduction in composite curing."""

__version__ = "0.1.0"
