"""Numeric inner loops.

Each kernel exists twice: a pure-numpy version and a numba ``@njit`` version
with identical semantics. The module-level names dispatch to numba unless the
``SALBCI_NO_NUMBA`` environment variable is set to a truthy value (or numba
cannot be imported). Both variants stay importable as ``numpy_kernels`` and
``numba_kernels`` so tests and the benchmark can compare them directly.

All kernels take float64 C-contiguous arrays and never validate inputs; the
callers in ``fusion``/``metrics``/``expressivity`` own validation.
"""

from __future__ import annotations

import math
import os
from types import SimpleNamespace

import numpy as np

_FLAG = os.environ.get("SALBCI_NO_NUMBA", "").strip().lower()
NUMBA_DISABLED = _FLAG not in ("", "0", "false", "no")

try:
    import numba
except ImportError:  # pragma: no cover - numba is an optional accelerator
    numba = None


# --------------------------------------------------------------------------
# pure numpy


def _fuse_log_np(face, ctx, prior, a, b):
    with np.errstate(divide="ignore"):
        lf = np.log(face)
        lc = np.log(ctx)
        lp = np.log(prior)
    a2 = a[:, None]
    b2 = b[:, None]
    # exponent 0 contributes nothing, even where the base is 0
    with np.errstate(invalid="ignore"):
        s = np.where(a2 == 0.0, 0.0, a2 * lf) + np.where(b2 == 0.0, 0.0, b2 * lc) - lp
    m = s.max(axis=1, keepdims=True)
    with np.errstate(invalid="ignore"):
        e = np.exp(s - m)
    return e / e.sum(axis=1, keepdims=True)


def _fuse_direct_np(face, ctx, prior, a, b):
    num = face ** a[:, None] * ctx ** b[:, None] / prior
    with np.errstate(invalid="ignore", divide="ignore"):
        return num / num.sum(axis=1, keepdims=True)


def _kld_rows_np(p, q):
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0.0, p * (np.log(p) - np.log(q)), 0.0)
    return terms.sum(axis=1)


def _mean_step_np(x):
    d = np.diff(x, axis=0)
    return float(np.sqrt((d * d).sum(axis=1)).mean())


numpy_kernels = SimpleNamespace(
    fuse_log=_fuse_log_np,
    fuse_direct=_fuse_direct_np,
    kld_rows=_kld_rows_np,
    mean_step=_mean_step_np,
    name="numpy",
)


# --------------------------------------------------------------------------
# numba


def _fuse_log_nb(face, ctx, prior, a, b):
    n, k = face.shape
    out = np.empty((n, k))
    s = np.empty(k)
    for i in range(n):
        m = -np.inf
        for j in range(k):
            v = -math.log(prior[i, j])
            if a[i] != 0.0:
                v += a[i] * math.log(face[i, j]) if face[i, j] > 0.0 else -np.inf
            if b[i] != 0.0:
                v += b[i] * math.log(ctx[i, j]) if ctx[i, j] > 0.0 else -np.inf
            s[j] = v
            if v > m:
                m = v
        if m == -np.inf:
            for j in range(k):
                out[i, j] = np.nan
            continue
        tot = 0.0
        for j in range(k):
            e = math.exp(s[j] - m)
            out[i, j] = e
            tot += e
        for j in range(k):
            out[i, j] /= tot
    return out


def _fuse_direct_nb(face, ctx, prior, a, b):
    n, k = face.shape
    out = np.empty((n, k))
    for i in range(n):
        tot = 0.0
        for j in range(k):
            v = face[i, j] ** a[i] * ctx[i, j] ** b[i] / prior[i, j]
            out[i, j] = v
            tot += v
        for j in range(k):
            out[i, j] = out[i, j] / tot if tot > 0.0 else np.nan
    return out


def _kld_rows_nb(p, q):
    n, k = p.shape
    out = np.zeros(n)
    for i in range(n):
        acc = 0.0
        for j in range(k):
            if p[i, j] > 0.0:
                if q[i, j] > 0.0:
                    acc += p[i, j] * (math.log(p[i, j]) - math.log(q[i, j]))
                else:
                    acc = np.inf
        out[i] = acc
    return out


def _mean_step_nb(x):
    n, d = x.shape
    total = 0.0
    for i in range(1, n):
        acc = 0.0
        for j in range(d):
            diff = x[i, j] - x[i - 1, j]
            acc += diff * diff
        total += math.sqrt(acc)
    return total / (n - 1)


def _writable(fn):
    # numba types read-only and non-contiguous arrays separately, so an
    # immutable input would trigger a fresh compile; copy only when needed
    def call(*args):
        return fn(*(np.require(a, np.float64, ["C", "W"]) for a in args))

    call.__name__ = fn.__name__
    call.dispatcher = fn
    return call


if numba is not None:
    _jit = numba.njit(cache=True, nogil=True)
    numba_kernels = SimpleNamespace(
        fuse_log=_writable(_jit(_fuse_log_nb)),
        fuse_direct=_writable(_jit(_fuse_direct_nb)),
        kld_rows=_writable(_jit(_kld_rows_nb)),
        mean_step=_writable(_jit(_mean_step_nb)),
        name="numba",
    )
else:  # pragma: no cover
    numba_kernels = None

active = numpy_kernels if (NUMBA_DISABLED or numba_kernels is None) else numba_kernels
BACKEND = active.name

fuse_log = active.fuse_log
fuse_direct = active.fuse_direct
kld_rows = active.kld_rows
mean_step = active.mean_step


def warmup() -> None:
    """Trigger JIT compilation (or cache load) for every active kernel."""
    f = np.full((2, 2), 0.5)
    w = np.full(2, 0.5)
    fuse_log(f, f, f, w, w)
    fuse_direct(f, f, f, w, w)
    kld_rows(f, f)
    mean_step(f)
