"""Test-session setup.

BLAS thread pools are capped before numpy loads: the models here are tiny,
so threaded matmul dispatch costs more than it saves, and single-threaded
execution keeps timing-sensitive acceptance runs reproducible.
"""

import os

for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
    os.environ.setdefault(var, "1")
