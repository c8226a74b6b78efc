"""Hot-kernel backend selection.

The compiled extension is preferred when importable; FVK_KERNELS=python
forces the NumPy fallback, FVK_KERNELS=native refuses to fall back.
"""

import os

_choice = os.environ.get("FVK_KERNELS", "auto").lower()

if _choice not in ("auto", "native", "python"):
    raise ValueError(f"FVK_KERNELS must be auto|native|python, got {_choice!r}")

if _choice == "python":
    from . import _numpy as kernels
else:
    try:
        from . import _native as kernels  # type: ignore[no-redef]
    except ImportError:
        if _choice == "native":
            raise
        from . import _numpy as kernels  # type: ignore[no-redef]

BACKEND = kernels.BACKEND

im2col1d = kernels.im2col1d
col2im1d = kernels.col2im1d
glu_forward = kernels.glu_forward
glu_backward = kernels.glu_backward
elu_forward = kernels.elu_forward
elu_backward = kernels.elu_backward
adam_step = kernels.adam_step
overlap_add = kernels.overlap_add
