"""B-spline kinodynamic planning on voxel grids."""

__version__ = "0.1.0"
