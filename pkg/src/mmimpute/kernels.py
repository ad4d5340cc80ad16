"""Kernel dispatch: compiled extension when importable, numpy otherwise.

Set ``MMIMPUTE_PURE_PYTHON=1`` before import to force the numpy path.
"""
import os

from mmimpute import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("MMIMPUTE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from mmimpute import _ckernels as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:
        pass

im2col = _impl.im2col
col2im = _impl.col2im
grouped_auc = _impl.grouped_auc
