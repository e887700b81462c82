"""Independent reference implementations used as test oracles.

These deliberately avoid the library's im2col/scatter machinery: plain
shifted-slice convolutions, two-pass normalization, per-pixel
interpolation formulas, and literal fusion transcriptions.
"""

import numpy as np


def conv_shift(x, w, b=None, padding=0, dilation=1):
    """3x3-style convolution as an explicit sum over shifted slices.

    x: [C, H, W]; w: [O, C, kh, kw]; stride 1 only.
    """
    c, h, wd = x.shape
    o, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    ho = h + 2 * padding - dilation * (kh - 1)
    wo = wd + 2 * padding - dilation * (kw - 1)
    out = np.zeros((o, ho, wo), dtype=np.float64)
    for u in range(kh):
        for v in range(kw):
            patch = xp[:, u * dilation : u * dilation + ho, v * dilation : v * dilation + wo]
            out += np.einsum("oc,chw->ohw", w[:, :, u, v], patch)
    if b is not None:
        out += b[:, None, None]
    return out


def groupnorm_two_pass(x, groups, gamma, beta, eps=1e-5):
    """x: [C, H, W]."""
    c = x.shape[0]
    per = c // groups
    out = np.empty_like(x, dtype=np.float64)
    for g in range(groups):
        block = x[g * per : (g + 1) * per]
        mean = block.mean()
        var = ((block - mean) ** 2).mean()
        out[g * per : (g + 1) * per] = (block - mean) / np.sqrt(var + eps)
    return out * gamma[:, None, None] + beta[:, None, None]


def bilinear_pixelwise(x, oh, ow):
    """x: [C, H, W]; the half-pixel sampling formula evaluated per pixel."""
    c, h, w = x.shape
    out = np.zeros((c, oh, ow), dtype=np.float64)
    for i in range(oh):
        sy = min(max((i + 0.5) * h / oh - 0.5, 0.0), h - 1.0)
        y0 = int(np.floor(sy))
        y1 = min(y0 + 1, h - 1)
        fy = sy - y0
        for j in range(ow):
            sx = min(max((j + 0.5) * w / ow - 0.5, 0.0), w - 1.0)
            x0 = int(np.floor(sx))
            x1 = min(x0 + 1, w - 1)
            fx = sx - x0
            out[:, i, j] = (
                (1 - fy) * (1 - fx) * x[:, y0, x0]
                + (1 - fy) * fx * x[:, y0, x1]
                + fy * (1 - fx) * x[:, y1, x0]
                + fy * fx * x[:, y1, x1]
            )
    return out


def top_down_fusion_transcription(feats, lateral_w, lateral_b, gammas, betas):
    """Literal line-by-line transcription of the first fusion recursion.

    feats: list of 5 arrays [C_i, H_i, W_i]. Walk i = 5..1: project with a
    1x1 conv to 21 channels, group-normalize (3 groups), and for i < 5
    average with the upsampled fused map from stage i+1.
    """
    proj = []
    for i in range(5):
        t = np.einsum("oc,chw->ohw", lateral_w[i][:, :, 0, 0], feats[i]) + lateral_b[i][:, None, None]
        proj.append(groupnorm_two_pass(t, 3, gammas[i], betas[i]))
    fused = [None] * 5
    fused[4] = proj[4]
    for i in range(3, -1, -1):
        up = bilinear_pixelwise(fused[i + 1], proj[i].shape[1], proj[i].shape[2])
        fused[i] = (up + proj[i]) / 2.0
    return fused


def pixel_weighted_sum(stacked, wc, ws):
    """Triple loop over (scale, row, col): sum of X * Wc * Ws per pixel."""
    L, h, w = stacked.shape
    out = np.zeros((h, w), dtype=np.float64)
    for j in range(h):
        for k in range(w):
            acc = 0.0
            for i in range(L):
                acc += stacked[i, j, k] * wc[i] * ws[i, j, k]
            out[j, k] = acc
    return out


def max_matching_exhaustive(adj):
    """Maximum bipartite matching size by exhaustive search.

    adj: list over left vertices of iterables of right-vertex indices.
    Bitmask DP over right vertices; fine for <= ~10 per side.
    """
    from functools import lru_cache

    adj = [tuple(a) for a in adj]

    @lru_cache(maxsize=None)
    def go(i, used):
        if i == len(adj):
            return 0
        best = go(i + 1, used)  # leave left vertex i unmatched
        for r in adj[i]:
            bit = 1 << r
            if not used & bit:
                best = max(best, 1 + go(i + 1, used | bit))
        return best

    result = go(0, 0)
    go.cache_clear()
    return result
