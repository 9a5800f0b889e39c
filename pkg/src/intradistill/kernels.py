"""Backend selection for the hot kernels.

The compiled ``_ckernels`` module is used when it has been built; otherwise
the numpy versions in ``_kernels_py`` are used. Setting the environment
variable ``INTRADISTILL_PURE_PYTHON=1`` forces the fallback.

Callers must look functions up through this module at call time
(``kernels.log_softmax(...)``) so that :func:`use_backend` takes effect.
"""
from __future__ import annotations

import contextlib
import os
from types import ModuleType
from typing import Iterator

from . import _kernels_py

try:
    from . import _ckernels  # type: ignore[attr-defined]
except ImportError:  # extension not built
    _ckernels = None

KERNEL_NAMES = (
    "log_softmax",
    "log_softmax_backward",
    "x_divergence",
    "js_divergence",
    "reverse_half",
    "pairwise_kl_sum",
)

BACKEND = "python"


def available_backends() -> list[str]:
    return ["python"] + (["cython"] if _ckernels is not None else [])


def backend_module(name: str) -> ModuleType:
    if name == "python":
        return _kernels_py
    if name == "cython":
        if _ckernels is None:
            raise RuntimeError("compiled kernels are not built; run `pip install -e .`")
        return _ckernels
    raise ValueError(f"unknown kernel backend {name!r}")


def _install(name: str) -> None:
    global BACKEND
    mod = backend_module(name)
    for fn in KERNEL_NAMES:
        globals()[fn] = getattr(mod, fn)
    BACKEND = name


@contextlib.contextmanager
def use_backend(name: str) -> Iterator[None]:
    previous = BACKEND
    _install(name)
    try:
        yield
    finally:
        _install(previous)


if os.environ.get("INTRADISTILL_PURE_PYTHON") or _ckernels is None:
    _install("python")
else:
    _install("cython")
