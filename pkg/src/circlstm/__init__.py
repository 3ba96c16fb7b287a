"""Block-circulant LSTM inference: spectral mat-vecs, 16-bit fixed point, and pipeline planning."""

__version__ = "0.1.0"
