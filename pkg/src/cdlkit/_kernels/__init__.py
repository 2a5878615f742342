"""Hot numeric kernels with two interchangeable backends.

The compiled Cython extension is preferred; a pure-numpy fallback keeps the
package functional without a compiler. Set CDLKIT_PURE_PYTHON=1 to force the
fallback. `benchmarks/bench_backends.py` compares the two.
"""

import os

if os.environ.get("CDLKIT_PURE_PYTHON"):
    from .pyref import levin_affinity, nn_lasso_cd

    BACKEND = "python"
else:
    try:
        from ._cdcore import levin_affinity, nn_lasso_cd

        BACKEND = "cython"
    except ImportError:
        from .pyref import levin_affinity, nn_lasso_cd

        BACKEND = "python"

__all__ = ["nn_lasso_cd", "levin_affinity", "BACKEND"]
