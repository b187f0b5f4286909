"""NumPy implementation of the Sinkhorn reductions, used when the compiled
extension is unavailable or ``ENTMONGE_PURE_PYTHON=1``."""

import numpy as np

BACKEND = "numpy"
_CHUNK = 128


def lse_rows(C, a, inv_eps, out, num_threads=1):
    """``out[i] = log sum_j exp(a[j] - C[i, j] * inv_eps)``; ``+inf`` costs drop out.

    ``num_threads`` is accepted for signature parity and ignored.
    """
    n, m = C.shape
    if a.shape[0] != m or out.shape[0] != n:
        raise ValueError("shape mismatch")
    if m == 0:
        out[:] = -np.inf
        return
    with np.errstate(invalid="ignore", over="ignore"):
        for start in range(0, n, _CHUNK):
            T = a[None, :] - C[start:start + _CHUNK] * inv_eps
            mx = T.max(axis=1)
            ok = mx > -np.inf
            shift = np.where(ok, mx, 0.0)
            s = np.exp(T - shift[:, None]).sum(axis=1)
            with np.errstate(divide="ignore"):
                out[start:start + _CHUNK] = np.where(ok, shift + np.log(s), -np.inf)
