"""Low-porosity tubule structures: FE compression, GRU surrogate, design sweeps."""
__version__ = "0.1.0"
