"""FETI-DP solvers for 2D incompressible Stokes on structured meshes."""
__version__ = "0.1.0"
