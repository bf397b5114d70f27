"""Backend selection for the batched hot kernels.

The compiled extension ``partmint._native`` is preferred when present; the
pure-NumPy fallback is used otherwise.  Set ``PARTMINT_KERNELS=python`` or
``PARTMINT_KERNELS=native`` to force a backend (the latter raises if the
extension was not built).
"""

import os

_requested = os.environ.get("PARTMINT_KERNELS", "").strip().lower()

if _requested in ("python", "fallback"):
    from partmint.kernels import fallback as _impl

    BACKEND = "python"
elif _requested in ("native", "c"):
    from partmint import _native as _impl  # type: ignore[no-redef]

    BACKEND = "native"
elif _requested:
    raise ValueError(f"unknown PARTMINT_KERNELS value: {_requested!r}")
else:
    try:
        from partmint import _native as _impl  # type: ignore[no-redef]

        BACKEND = "native"
    except ImportError:
        from partmint.kernels import fallback as _impl

        BACKEND = "python"

conv_scores = _impl.conv_scores
softmax2d = _impl.softmax2d
box3x3 = _impl.box3x3
loss_grad = _impl.loss_grad

__all__ = ["BACKEND", "conv_scores", "softmax2d", "box3x3", "loss_grad"]
