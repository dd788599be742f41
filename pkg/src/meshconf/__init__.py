"""Error estimation for single-image human mesh reconstruction from mesh/keypoint disagreement."""

__version__ = "0.1.0"
