"""First-passage percolation laboratory: exact lattice geodesics and scaling diagnostics."""

__version__ = "0.1.0"
