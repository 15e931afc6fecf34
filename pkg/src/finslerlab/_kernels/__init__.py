"""Backend dispatch for the hot kernels.

``FINSLERLAB_BACKEND=numba`` (default) uses the ``@njit`` kernels;
``FINSLERLAB_BACKEND=numpy`` forces the vectorized numpy path.  If numba
cannot be imported the numpy path is used.
"""
from __future__ import annotations

import logging
import os

import numpy as np

from ..autodiff import jet_tables
from . import _numpy_impl
from ._ops import STATUS_TEXT  # noqa: F401

log = logging.getLogger(__name__)

BACKEND_ENV = "FINSLERLAB_BACKEND"


class _Backend:
    def __init__(self, name: str, impl):
        self.name = name
        self._impl = impl

    def _args(self, prog, order):
        t = jet_tables(prog.nvars)
        args = (t.pi, t.pj, t.pc, int(t.npairs[order]), int(t.msize[order]))
        return t, args

    def eval_tape(self, prog, X: np.ndarray, order: int):
        """Jets ``(P, nout, M)`` of every program output, plus status and failing slot per point."""
        X = np.ascontiguousarray(X, dtype=float)
        t, args = self._args(prog, order)
        extra = (t.starts[order],) if self.name == "numpy" else ()
        return self._impl.eval_tape(prog.ops, prog.a0, prog.a1, prog.cst, prog.outputs, X, order, *args, *extra)

    def spray(self, prog, X: np.ndarray, n: int, output: int = 0):
        X = np.ascontiguousarray(X, dtype=float)
        t, args = self._args(prog, 2)
        extra = (t.starts[2],) if self.name == "numpy" else ()
        slot = int(prog.outputs[output])
        return self._impl.spray(prog.ops, prog.a0, prog.a1, prog.cst, slot, X, n, *args, t.idx2, t.sc2, *extra)

    def rk4(self, prog, x0: np.ndarray, h: float, nsteps: int, n: int, umin: float, output: int = 0):
        x0 = np.ascontiguousarray(x0, dtype=float)
        t, args = self._args(prog, 2)
        extra = (t.starts[2],) if self.name == "numpy" else ()
        slot = int(prog.outputs[output])
        return self._impl.rk4(
            prog.ops, prog.a0, prog.a1, prog.cst, slot, x0, float(h), int(nsteps), n, float(umin),
            *args, t.idx2, t.sc2, *extra,
        )

    def __repr__(self):
        return f"<finslerlab backend {self.name}>"


_cache: dict[str, _Backend] = {}


def get_backend(name: str | None = None) -> _Backend:
    name = (name or os.environ.get(BACKEND_ENV, "numba")).strip().lower()
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}; use 'numba' or 'numpy'")
    if name in _cache:
        return _cache[name]
    if name == "numba":
        try:
            from . import _numba_impl
        except ImportError:  # pragma: no cover - numba is a declared dependency
            log.warning("numba unavailable, falling back to numpy kernels")
            return get_backend("numpy")
        backend = _Backend("numba", _numba_impl)
    else:
        backend = _Backend("numpy", _numpy_impl)
    _cache[name] = backend
    return backend


def numba_available() -> bool:
    try:
        import numba  # noqa: F401
    except ImportError:  # pragma: no cover
        return False
    return True
