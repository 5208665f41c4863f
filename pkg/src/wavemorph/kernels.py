"""Hot numeric kernels: periodic separable filtering, valid 2D convolution
forward/backward, and 2x2 max pooling.

Every public function dispatches between a numba-jitted implementation and
a pure-numpy fallback (see :mod:`wavemorph.backend`). Both paths compute
the same quantities; floating-point summation order may differ, so the two
backends agree to rounding, not bit-for-bit. Within one backend results
are deterministic regardless of thread count: parallel loops only write
disjoint output slices and accumulate sequentially inside each slice.

Conventions:
  * Periodic analysis filtering: ``y[n] = sum_k taps[k] * x[(n - d*k) % N]``.
  * Adjoint (synthesis) filtering is the circular correlation
    ``y[n] = sum_k taps[k] * x[(n + d*k) % N]``.
  * Convolution is "valid" with stride ``s``: ``Ho = (H - k) // s + 1``.
"""

import numpy as np

from .backend import have_numba, numba_enabled

if have_numba():
    from numba import njit, prange
else:  # pragma: no cover
    njit = None
    prange = range


# ---------------------------------------------------------------------------
# Pure-numpy implementations


def _np_filter_periodic(x, taps, dilation, axis, adjoint):
    y = np.zeros_like(x)
    sign = -1 if adjoint else 1
    for k, t in enumerate(taps):
        y += t * np.roll(x, sign * dilation * k, axis=axis)
    return y


def _np_conv2d_forward(x, w, b, stride):
    k = w.shape[2]
    v = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
    v = v[:, :, ::stride, ::stride]
    y = np.einsum("bihwkl,oikl->bohw", v, w, optimize=True)
    return y + b[None, :, None, None]


def _np_conv2d_backward_input(gy, w, stride, h, wdt):
    bsz, _, ho, wo = gy.shape
    cin, k = w.shape[1], w.shape[2]
    gx = np.zeros((bsz, cin, h, wdt), dtype=gy.dtype)
    for kk in range(k):
        for ll in range(k):
            g = np.einsum("bohw,oi->bihw", gy, w[:, :, kk, ll], optimize=True)
            gx[:, :, kk : kk + stride * ho : stride, ll : ll + stride * wo : stride] += g
    return gx


def _np_conv2d_backward_weights(x, gy, stride, k):
    v = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
    v = v[:, :, ::stride, ::stride]
    gw = np.einsum("bihwkl,bohw->oikl", v, gy, optimize=True)
    gb = gy.sum(axis=(0, 2, 3))
    return gw, gb


def _np_maxpool2_forward(x):
    bsz, c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    xc = x[:, :, : 2 * h2, : 2 * w2]
    r = xc.reshape(bsz, c, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5)
    r = r.reshape(bsz, c, h2, w2, 4)
    idx = r.argmax(axis=-1).astype(np.int64)
    y = np.take_along_axis(r, idx[..., None], axis=-1)[..., 0]
    return y, idx


def _np_maxpool2_backward(gy, idx, h, w):
    bsz, c, h2, w2 = gy.shape
    gx = np.zeros((bsz, c, h, w), dtype=gy.dtype)
    rows = 2 * np.arange(h2)[None, None, :, None] + idx // 2
    cols = 2 * np.arange(w2)[None, None, None, :] + idx % 2
    bi = np.arange(bsz)[:, None, None, None]
    ci = np.arange(c)[None, :, None, None]
    np.add.at(gx, (bi, ci, rows, cols), gy)
    return gx


# ---------------------------------------------------------------------------
# Numba implementations

if have_numba():

    @njit(cache=True, fastmath=True, parallel=True)
    def _nb_filter_axis0(x, taps, dilation, sign):
        n0, n1 = x.shape
        nt = taps.shape[0]
        y = np.zeros((n0, n1), dtype=x.dtype)
        for i in prange(n0):
            for k in range(nt):
                src = (i - sign * dilation * k) % n0
                t = taps[k]
                for j in range(n1):
                    y[i, j] += t * x[src, j]
        return y

    @njit(cache=True, fastmath=True, parallel=True)
    def _nb_filter_axis1(x, taps, dilation, sign):
        n0, n1 = x.shape
        nt = taps.shape[0]
        y = np.zeros((n0, n1), dtype=x.dtype)
        for i in prange(n0):
            for k in range(nt):
                t = taps[k]
                src = (-sign * dilation * k) % n1  # source index for j=0
                for j in range(n1):
                    y[i, j] += t * x[i, src]
                    src += 1
                    if src == n1:
                        src = 0
        return y

    # Convolutions are expressed as k*k channel-space GEMMs over strided
    # input slices; numba lowers np.dot to BLAS.

    @njit(cache=True, fastmath=True, parallel=True)
    def _nb_conv2d_forward(x, w, b, stride):
        bsz, cin, h, wdt = x.shape
        cout, _, k, _ = w.shape
        ho = (h - k) // stride + 1
        wo = (wdt - k) // stride + 1
        y = np.empty((bsz, cout, ho, wo), dtype=x.dtype)
        for bb in prange(bsz):
            acc = np.zeros((cout, ho * wo), dtype=x.dtype)
            for kk in range(k):
                for ll in range(k):
                    xs = np.ascontiguousarray(
                        x[bb, :, kk : kk + stride * ho : stride, ll : ll + stride * wo : stride]
                    ).reshape(cin, ho * wo)
                    wm = np.ascontiguousarray(w[:, :, kk, ll])
                    acc += np.dot(wm, xs)
            for o in range(cout):
                for i2 in range(ho):
                    for j2 in range(wo):
                        y[bb, o, i2, j2] = acc[o, i2 * wo + j2] + b[o]
        return y

    @njit(cache=True, fastmath=True, parallel=True)
    def _nb_conv2d_backward_input(gy, w, stride, h, wdt):
        bsz, cout, ho, wo = gy.shape
        cin, k = w.shape[1], w.shape[2]
        gx = np.zeros((bsz, cin, h, wdt), dtype=gy.dtype)
        for bb in prange(bsz):
            gyf = np.ascontiguousarray(gy[bb]).reshape(cout, ho * wo)
            for kk in range(k):
                for ll in range(k):
                    wm = np.ascontiguousarray(w[:, :, kk, ll]).T.copy()
                    g = np.dot(wm, gyf)  # (cin, ho*wo)
                    gv = gx[bb, :, kk : kk + stride * ho : stride, ll : ll + stride * wo : stride]
                    for i in range(cin):
                        for i2 in range(ho):
                            for j2 in range(wo):
                                gv[i, i2, j2] += g[i, i2 * wo + j2]
        return gx

    @njit(cache=True, fastmath=True)
    def _nb_conv2d_backward_weights(x, gy, stride, k):
        bsz, cin, _, _ = x.shape
        cout, ho, wo = gy.shape[1], gy.shape[2], gy.shape[3]
        gw = np.zeros((cout, cin, k, k), dtype=x.dtype)
        gb = np.zeros(cout, dtype=x.dtype)
        for bb in range(bsz):
            gyf = np.ascontiguousarray(gy[bb]).reshape(cout, ho * wo)
            for kk in range(k):
                for ll in range(k):
                    xs = np.ascontiguousarray(
                        x[bb, :, kk : kk + stride * ho : stride, ll : ll + stride * wo : stride]
                    ).reshape(cin, ho * wo)
                    g = np.dot(gyf, xs.T)  # (cout, cin)
                    for o in range(cout):
                        for i in range(cin):
                            gw[o, i, kk, ll] += g[o, i]
            for o in range(cout):
                for p in range(ho * wo):
                    gb[o] += gyf[o, p]
        return gw, gb

    @njit(cache=True, fastmath=True, parallel=True)
    def _nb_maxpool2_forward(x):
        bsz, c, h, w = x.shape
        h2, w2 = h // 2, w // 2
        y = np.empty((bsz, c, h2, w2), dtype=x.dtype)
        idx = np.empty((bsz, c, h2, w2), dtype=np.int64)
        for bb in prange(bsz):
            for i in range(c):
                for i2 in range(h2):
                    for j2 in range(w2):
                        best = x[bb, i, 2 * i2, 2 * j2]
                        arg = 0
                        p = 0
                        for dr in range(2):
                            for dc in range(2):
                                v = x[bb, i, 2 * i2 + dr, 2 * j2 + dc]
                                if v > best:
                                    best = v
                                    arg = p
                                p += 1
                        y[bb, i, i2, j2] = best
                        idx[bb, i, i2, j2] = arg
        return y, idx

    @njit(cache=True, fastmath=True, parallel=True)
    def _nb_maxpool2_backward(gy, idx, h, w):
        bsz, c, h2, w2 = gy.shape
        gx = np.zeros((bsz, c, h, w), dtype=gy.dtype)
        for bb in prange(bsz):
            for i in range(c):
                for i2 in range(h2):
                    for j2 in range(w2):
                        a = idx[bb, i, i2, j2]
                        gx[bb, i, 2 * i2 + a // 2, 2 * j2 + a % 2] += gy[bb, i, i2, j2]
        return gx


# ---------------------------------------------------------------------------
# Dispatch


def filter_periodic(x, taps, dilation, axis, adjoint=False):
    """Dilated periodic filtering of a 2D grid along one axis."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    taps = np.asarray(taps, dtype=np.float64)
    if numba_enabled():
        sign = -1 if adjoint else 1
        if axis == 0:
            return _nb_filter_axis0(x, taps, dilation, sign)
        return _nb_filter_axis1(x, taps, dilation, sign)
    return _np_filter_periodic(x, taps, dilation, axis, adjoint)


def conv2d_forward(x, w, b, stride=1):
    if numba_enabled():
        return _nb_conv2d_forward(x, w, b, stride)
    return _np_conv2d_forward(x, w, b, stride)


def conv2d_backward_input(gy, w, stride, h, wdt):
    if numba_enabled():
        return _nb_conv2d_backward_input(gy, w, stride, h, wdt)
    return _np_conv2d_backward_input(gy, w, stride, h, wdt)


def conv2d_backward_weights(x, gy, stride, k):
    if numba_enabled():
        return _nb_conv2d_backward_weights(x, gy, stride, k)
    return _np_conv2d_backward_weights(x, gy, stride, k)


def maxpool2_forward(x):
    """2x2/stride-2 max pool; odd trailing rows/cols are dropped.

    Returns (pooled, argmax) where argmax encodes the in-window winner as
    2*dr + dc, first occurrence on ties.
    """
    if numba_enabled():
        return _nb_maxpool2_forward(x)
    return _np_maxpool2_forward(x)


def maxpool2_backward(gy, idx, h, w):
    if numba_enabled():
        return _nb_maxpool2_backward(gy, idx, h, w)
    return _np_maxpool2_backward(gy, idx, h, w)
