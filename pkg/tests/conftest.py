# Pin BLAS to one thread before numpy loads anywhere in the test session;
# the byte-determinism guarantees assume serial kernels.
import os

os.environ["PROTOSEG_THREADS"] = "1"
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS",
             "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
    os.environ.setdefault(_var, "1")
