"""Naive reference implementations used by the oracle and acceptance suites.

Triple loops on purpose: slow, obvious, and structurally unrelated to the
vectorized code under test.
"""

import numpy as np


def naive_matmul(a, b):
    n, k = a.shape
    _, m = b.shape
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            for l in range(k):
                out[i, j] += a[i, l] * b[l, j]
    return out


def naive_conv1d(x, w, b):
    c_in, length = x.shape
    c_out, _, k = w.shape
    pad = k // 2
    out = np.zeros((c_out, length))
    for o in range(c_out):
        for pos in range(length):
            acc = 0.0
            for ci in range(c_in):
                for kk in range(k):
                    src = pos + kk - pad
                    if 0 <= src < length:
                        acc += x[ci, src] * w[o, ci, kk]
            out[o, pos] = acc + (b[o] if b is not None else 0.0)
    return out


def naive_conv2d(x, w, b, stride=1):
    c_in, h, wd = x.shape
    c_out, _, k, _ = w.shape
    pad = k // 2
    oh = (h + 2 * pad - k) // stride + 1
    ow = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((c_out, oh, ow))
    for o in range(c_out):
        for i in range(oh):
            for j in range(ow):
                acc = 0.0
                for ci in range(c_in):
                    for ky in range(k):
                        for kx in range(k):
                            y = i * stride + ky - pad
                            x_ = j * stride + kx - pad
                            if 0 <= y < h and 0 <= x_ < wd:
                                acc += x[ci, y, x_] * w[o, ci, ky, kx]
                out[o, i, j] = acc + (b[o] if b is not None else 0.0)
    return out


def naive_masked_pool(x, grid, divide_by_l=False):
    c, l = x.shape
    flat = grid.reshape(-1)
    acc = np.zeros(c)
    for i in range(c):
        for j in range(l):
            if flat[j] == 1.0:
                acc[i] += x[i, j]
    div = l if divide_by_l else flat.sum()
    return (acc / div).reshape(c, 1)


def naive_cosine_rows(g):
    n = g.shape[0]
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            denom = np.linalg.norm(g[i]) * np.linalg.norm(g[j])
            out[i, j] = g[i] @ g[j] / denom if denom > 0 else 0.0
    return out


def naive_edge_cosine(xq, xs):
    lq, ls = xq.shape[1], xs.shape[1]
    out = np.zeros((lq, ls))
    for i in range(lq):
        for j in range(ls):
            d = np.linalg.norm(xq[:, i]) * np.linalg.norm(xs[:, j])
            out[i, j] = xq[:, i] @ xs[:, j] / d if d > 0 else 0.0
    return out


def naive_bce(p, t, eps=1e-7):
    total = 0.0
    for pi, ti in zip(p.flat, t.flat):
        pc = min(max(pi, eps), 1.0 - eps)
        total += ti * np.log(pc) + (1.0 - ti) * np.log(1.0 - pc)
    return -total / p.size


def naive_iou(p, t):
    inter = sum(int(a and b) for a, b in zip(p.flat, t.flat))
    union = sum(int(a or b) for a, b in zip(p.flat, t.flat))
    return 1.0 if union == 0 else inter / union
