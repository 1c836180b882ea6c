"""Nanoparticle segmentation, morphometry and morphology classification."""

__version__ = "0.1.0"

# Fixed class order; confusion matrices and classifier outputs index by this.
CLASS_NAMES = ("Cluster", "Fiber", "Matrix", "MatrixSurface")
