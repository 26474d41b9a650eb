"""Articulated occupancy of parametric bodies with learned skinning fields."""

import os

# The only inner parallelism is the BLAS behind numpy.  LEAP_THREADS caps it,
# which only takes effect when this package is imported before numpy.
if os.environ.get("LEAP_THREADS"):
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, os.environ["LEAP_THREADS"])

__version__ = "0.1.0"
