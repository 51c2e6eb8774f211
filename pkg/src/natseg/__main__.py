"""``python -m natseg`` entry point.

NATSEG_THREADS caps internal parallelism; it must be applied to the BLAS
thread pools before numpy is first imported, hence this happens here
rather than in cli.main().
"""

import os
import sys

_threads = os.environ.get("NATSEG_THREADS")
if _threads:
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, _threads)

from natseg.cli import main  # noqa: E402

if __name__ == "__main__":
    sys.exit(main())
