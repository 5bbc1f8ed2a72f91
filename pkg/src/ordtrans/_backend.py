"""Select the likelihood kernels at import time.

The compiled extension is used when it was built; set ``ORDTRANS_PURE=1``
to force the NumPy fallback.
"""

import os

from . import _kernels_py

if os.environ.get("ORDTRANS_PURE", "") not in ("", "0"):
    kernels = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as kernels
        BACKEND = "compiled"
    except ImportError:
        kernels = _kernels_py
        BACKEND = "python"

loglik_grad = kernels.loglik_grad
probabilities = kernels.probabilities
