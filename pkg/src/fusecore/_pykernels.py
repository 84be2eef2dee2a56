"""Pure-Python (numpy) reference kernels.

Used when the compiled ``_ckernels`` extension is unavailable or when
``FUSECORE_PURE_PYTHON=1``. Every function takes and returns C-contiguous
float64 arrays; masks are ``uint8`` with a row period (mask row ``i % R``
applies to input row ``i``), which lets one [N x M] mask serve all heads.
"""
import numpy as np


def softmax_rows_fwd(x, mask=None):
    rows, cols = x.shape
    if mask is None:
        z = x - x.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e * (1.0 / e.sum(axis=1, keepdims=True))
    allowed = np.tile(mask.astype(bool), (rows // mask.shape[0], 1))
    z = np.where(allowed, x, -np.inf)
    mx = z.max(axis=1, keepdims=True)
    empty = ~np.isfinite(mx)
    mx[empty] = 0.0
    e = np.where(allowed, np.exp(np.where(allowed, z - mx, 0.0)), 0.0)
    s = e.sum(axis=1, keepdims=True)
    s[empty] = 1.0
    return e * (1.0 / s)


def softmax_rows_bwd(y, gy):
    dot = (y * gy).sum(axis=1, keepdims=True)
    return y * (gy - dot)


def layer_norm_fwd(x, gain, bias, eps):
    mean = x.mean(axis=1, keepdims=True)
    c = x - mean
    var = (c * c).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = c * rstd
    return xhat * gain + bias, xhat, rstd[:, 0].copy()


def layer_norm_bwd(gy, xhat, rstd, gain):
    g = gy * gain
    mg = g.mean(axis=1, keepdims=True)
    mgx = (g * xhat).mean(axis=1, keepdims=True)
    gx = rstd[:, None] * (g - mg - xhat * mgx)
    return gx, (gy * xhat).sum(axis=0), gy.sum(axis=0)


def lcs_length(a, b):
    a = list(a)
    b = list(b)
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, 1):
            if x == y:
                cur[j] = prev[j - 1] + 1
            else:
                cur[j] = prev[j] if prev[j] >= cur[j - 1] else cur[j - 1]
        prev = cur
    return prev[-1]
