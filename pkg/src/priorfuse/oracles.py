"""Straight-line loop implementations used to cross-check the vectorised operators.

These deliberately avoid the code paths they verify: plain Python loops over
numpy scalars, no im2col, no batched products.
"""

from __future__ import annotations

import math

import numpy as np


def loop_conv2d(x, w, b=None, stride=1, padding=0, groups=1):
    B, C, H, W = x.shape
    O, Cg, k, _ = w.shape
    Ho = (H + 2 * padding - k) // stride + 1
    Wo = (W + 2 * padding - k) // stride + 1
    og = O // groups
    out = np.zeros((B, O, Ho, Wo))
    for n in range(B):
        for o in range(O):
            g = o // og
            for i in range(Ho):
                for j in range(Wo):
                    acc = 0.0 if b is None else float(b[o])
                    for c in range(Cg):
                        cin = g * Cg + c
                        for di in range(k):
                            for dj in range(k):
                                r = i * stride + di - padding
                                s = j * stride + dj - padding
                                if 0 <= r < H and 0 <= s < W:
                                    acc += float(w[o, c, di, dj]) * float(x[n, cin, r, s])
                    out[n, o, i, j] = acc
    return out


def loop_matmul(a, b):
    B, n, m = a.shape
    p = b.shape[2]
    out = np.zeros((B, n, p))
    for t in range(B):
        for i in range(n):
            for j in range(p):
                acc = 0.0
                for q in range(m):
                    acc += float(a[t, i, q]) * float(b[t, q, j])
                out[t, i, j] = acc
    return out


def loop_layer_norm(v, gain, shift, eps):
    n = len(v)
    mu = sum(float(t) for t in v) / n
    var = sum((float(t) - mu) ** 2 for t in v) / n
    return np.array([(float(t) - mu) / math.sqrt(var + eps) * gain[i] + shift[i] for i, t in enumerate(v)])


def loop_softmax(v):
    m = max(v)
    e = [math.exp(float(t) - m) for t in v]
    s = sum(e)
    return np.array([t / s for t in e])


def loop_gelu(v):
    return 0.5 * v * (1.0 + math.tanh(math.sqrt(2.0 / math.pi) * (v + 0.044715 * v**3)))


def loop_cwmc_windows(x, kernels, kbias, k, s, p):
    """Channel sliding window responses: [B, Cout, Nwin, H, W]."""
    B, C, H, W = x.shape
    Cout = kernels.shape[0]
    nwin = (C + 2 * p - k) // s + 1
    out = np.zeros((B, Cout, nwin, H, W))
    for n in range(B):
        for o in range(Cout):
            for t in range(nwin):
                for i in range(H):
                    for j in range(W):
                        acc = float(kbias[o])
                        for q in range(k):
                            c = t * s + q - p
                            if 0 <= c < C:
                                acc += float(kernels[o, q]) * float(x[n, c, i, j])
                        out[n, o, t, i, j] = acc
    return out


def loop_pointwise(x, w, b):
    """1x1 convolution by loops: x [B, C, H, W], w [O, C], b [O]."""
    B, C, H, W = x.shape
    O = w.shape[0]
    out = np.zeros((B, O, H, W))
    for n in range(B):
        for o in range(O):
            for i in range(H):
                for j in range(W):
                    acc = float(b[o])
                    for c in range(C):
                        acc += float(w[o, c]) * float(x[n, c, i, j])
                    out[n, o, i, j] = acc
    return out


def loop_cwmc(x, kernels, kbias, k, s, p, w1, b1, w2, b2):
    """Full channel-wise mixing convolution: windows, fold (Cout-major), two 1x1 maps."""
    y = loop_cwmc_windows(x, kernels, kbias, k, s, p)
    B, Cout, nwin, H, W = y.shape
    folded = y.reshape(B, Cout * nwin, H, W)
    return loop_pointwise(loop_pointwise(folded, w1, b1), w2, b2)


def materialized_dynamic_conv(x, kernels, biases, pi, stride=1, padding=1):
    """Per-location kernel materialisation: build W_n = sum_m pi[n,m] W_m, then correlate.

    x [B, C, H, W]; kernels [B, M, O, C, k, k]; biases [B, M, O]; pi [B, M, Ho, Wo].
    """
    B, C, H, W = x.shape
    _, M, O, _, k, _ = kernels.shape
    Ho, Wo = pi.shape[2:]
    out = np.zeros((B, O, Ho, Wo))
    for n in range(B):
        for i in range(Ho):
            for j in range(Wo):
                wn = np.zeros((O, C, k, k))
                bn = np.zeros(O)
                for m in range(M):
                    wn += pi[n, m, i, j] * kernels[n, m]
                    bn += pi[n, m, i, j] * biases[n, m]
                for o in range(O):
                    acc = bn[o]
                    for c in range(C):
                        for di in range(k):
                            for dj in range(k):
                                r, q = i * stride + di - padding, j * stride + dj - padding
                                if 0 <= r < H and 0 <= q < W:
                                    acc += wn[o, c, di, dj] * x[n, c, r, q]
                    out[n, o, i, j] = acc
    return out


def loop_cross_attention(tokens, queries, wq, bq, wk, bk, wv, bv, wo, bo, heads):
    """Multi-head cross-attention with explicit loops.

    tokens [N, C] (one batch element), queries [M, C]; returns ([M, C], attention [h, M, N]).
    """
    N, C = tokens.shape
    M = queries.shape[0]
    d = C // heads
    q = queries @ wq.T + bq
    kk = tokens @ wk.T + bk
    v = tokens @ wv.T + bv
    out = np.zeros((M, C))
    attn = np.zeros((heads, M, N))
    for h in range(heads):
        sl = slice(h * d, (h + 1) * d)
        for m in range(M):
            scores = [sum(q[m, sl][t] * kk[n, sl][t] for t in range(d)) / math.sqrt(d) for n in range(N)]
            w = loop_softmax(scores)
            attn[h, m] = w
            for n in range(N):
                out[m, sl] += w[n] * v[n, sl]
    return out @ wo.T + bo, attn
