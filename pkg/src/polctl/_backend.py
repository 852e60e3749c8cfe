"""Kernel backend selection.

The compiled extension is used when it imports; set ``POLCTL_PURE_PYTHON=1``
to force the pure-Python fallback.
"""
import importlib
import os

from . import _kernels_py


def load(name: str):
    if name == "python":
        return _kernels_py
    if name == "cython":
        return importlib.import_module("polctl._ckernels")
    raise ValueError(f"unknown kernel backend {name!r}")


def available() -> list[str]:
    names = ["python"]
    try:
        load("cython")
    except ImportError:
        pass
    else:
        names.insert(0, "cython")
    return names


if os.environ.get("POLCTL_PURE_PYTHON", "") not in ("", "0"):
    kernels, BACKEND = _kernels_py, "python"
else:
    try:
        kernels, BACKEND = load("cython"), "cython"
    except ImportError:
        kernels, BACKEND = _kernels_py, "python"
