"""Hot loops with a numba backend and a pure-numpy fallback.

The backend is chosen once at import time.  Setting ``PTSELECT_NUMBA=0`` in the
environment (or running without numba installed) selects the numpy versions.
Both backends are importable explicitly as ``numpy_impl`` and ``numba_impl``
(the latter is ``None`` when numba is unavailable) so that tests and the
benchmark script can compare them on identical inputs.
"""

from __future__ import annotations

import os
from types import SimpleNamespace

import numpy as np
from numpy.typing import NDArray

__all__ = [
    "BACKEND",
    "criterion_scan",
    "level_prefix_max",
    "separable_sum_eval",
    "numpy_impl",
    "numba_impl",
]


# ---------------------------------------------------------------------------
# numpy reference implementations
# ---------------------------------------------------------------------------


def _criterion_scan_np(D: NDArray, thr: NDArray, sig: NDArray, rtol: float) -> NDArray:
    """R[m] = max over n with sig[n] >= sig[m] of D[m, n] - thr[n]."""
    mask = sig[None, :] >= sig[:, None] * (1.0 - rtol)
    vals = np.where(mask, D - thr[None, :], -np.inf)
    return vals.max(axis=1)


def _level_prefix_max_np(D: NDArray, order: NDArray, level_end: NDArray) -> NDArray:
    """Running max of D[..., order] along the last axis, read at level ends."""
    run = np.maximum.accumulate(D[..., order], axis=-1)
    return run[..., level_end]


def _piecewise_eval_np(u: NDArray, breaks: NDArray, coefs: NDArray) -> NDArray:
    out = np.zeros_like(u)
    npieces = coefs.shape[0]
    for p in range(npieces):
        lo, hi = breaks[p], breaks[p + 1]
        if p == npieces - 1:
            m = (u >= lo) & (u <= hi)
        else:
            m = (u >= lo) & (u < hi)
        if np.any(m):
            out[m] = np.polynomial.polynomial.polyval(u[m], coefs[p])
    return out


def _separable_sum_eval_np(
    s: NDArray, amps: NDArray, dil: NDArray, breaks: NDArray, coefs: NDArray
) -> NDArray:
    """G(s) = sum_j amps[j] * prod_i g0(dil[j] * s_i) for points s of shape (N, d)."""
    out = np.zeros(s.shape[0])
    for j in range(amps.shape[0]):
        prod = np.ones(s.shape[0])
        for i in range(s.shape[1]):
            prod *= _piecewise_eval_np(dil[j] * s[:, i], breaks, coefs)
        out += amps[j] * prod
    return out


numpy_impl = SimpleNamespace(
    criterion_scan=_criterion_scan_np,
    level_prefix_max=_level_prefix_max_np,
    separable_sum_eval=_separable_sum_eval_np,
)


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------


def _build_numba():
    try:
        from numba import njit
    except ImportError:  # pragma: no cover - numba is a declared dependency
        return None

    @njit(cache=True)
    def criterion_scan(D, thr, sig, rtol):
        n = D.shape[0]
        out = np.empty(n)
        for m in range(n):
            lo = sig[m] * (1.0 - rtol)
            best = -np.inf
            for k in range(n):
                if sig[k] >= lo:
                    v = D[m, k] - thr[k]
                    if v > best:
                        best = v
            out[m] = best
        return out

    @njit(cache=True)
    def _prefix_2d(D, order, level_end):
        nm = D.shape[0]
        nl = level_end.shape[0]
        out = np.empty((nm, nl))
        for m in range(nm):
            run = -np.inf
            lev = 0
            for k in range(order.shape[0]):
                v = D[m, order[k]]
                if v > run:
                    run = v
                while lev < nl and level_end[lev] == k:
                    out[m, lev] = run
                    lev += 1
        return out

    def level_prefix_max(D, order, level_end):
        D = np.ascontiguousarray(D, dtype=np.float64)
        lead = D.shape[:-2]
        flat = D.reshape((-1,) + D.shape[-2:])
        res = np.empty((flat.shape[0], flat.shape[1], level_end.shape[0]))
        order = np.ascontiguousarray(order, dtype=np.int64)
        level_end = np.ascontiguousarray(level_end, dtype=np.int64)
        for b in range(flat.shape[0]):
            res[b] = _prefix_2d(flat[b], order, level_end)
        return res.reshape(lead + res.shape[1:])

    @njit(cache=True)
    def _poly_piece(u, breaks, coefs):
        npieces = coefs.shape[0]
        if u < breaks[0] or u > breaks[npieces]:
            return 0.0
        p = 0
        while p < npieces - 1 and u >= breaks[p + 1]:
            p += 1
        acc = 0.0
        for c in range(coefs.shape[1] - 1, -1, -1):
            acc = acc * u + coefs[p, c]
        return acc

    @njit(cache=True)
    def separable_sum_eval(s, amps, dil, breaks, coefs):
        npts = s.shape[0]
        d = s.shape[1]
        out = np.zeros(npts)
        for q in range(npts):
            tot = 0.0
            for j in range(amps.shape[0]):
                prod = amps[j]
                for i in range(d):
                    prod *= _poly_piece(dil[j] * s[q, i], breaks, coefs)
                    if prod == 0.0:
                        break
                tot += prod
            out[q] = tot
        return out

    return SimpleNamespace(
        criterion_scan=criterion_scan,
        level_prefix_max=level_prefix_max,
        separable_sum_eval=separable_sum_eval,
    )


numba_impl = _build_numba()

_use_numba = os.environ.get("PTSELECT_NUMBA", "1").strip().lower() not in {"0", "false", "no", "off"}
_impl = numba_impl if (_use_numba and numba_impl is not None) else numpy_impl
BACKEND = "numba" if _impl is numba_impl else "numpy"


def criterion_scan(D: NDArray, thr: NDArray, sig: NDArray, rtol: float = 1e-12) -> NDArray:
    """Row-wise max of ``D - thr`` restricted to columns with ``sig >= sig[row]``."""
    return _impl.criterion_scan(
        np.ascontiguousarray(D, dtype=np.float64),
        np.ascontiguousarray(thr, dtype=np.float64),
        np.ascontiguousarray(sig, dtype=np.float64),
        float(rtol),
    )


def level_prefix_max(D: NDArray, order: NDArray, level_end: NDArray) -> NDArray:
    """Prefix maxima of ``D`` over columns sorted by ``order``, sampled at ``level_end``."""
    return _impl.level_prefix_max(D, np.asarray(order, dtype=np.int64), np.asarray(level_end, dtype=np.int64))


def separable_sum_eval(
    s: NDArray, amps: NDArray, dil: NDArray, breaks: NDArray, coefs: NDArray
) -> NDArray:
    """Evaluate a sum of dilated product profiles at points ``s`` (shape ``(N, d)``)."""
    return _impl.separable_sum_eval(
        np.ascontiguousarray(s, dtype=np.float64),
        np.ascontiguousarray(amps, dtype=np.float64),
        np.ascontiguousarray(dil, dtype=np.float64),
        np.ascontiguousarray(breaks, dtype=np.float64),
        np.ascontiguousarray(coefs, dtype=np.float64),
    )
