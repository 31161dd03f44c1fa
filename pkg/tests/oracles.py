"""Brute-force reference implementations used only by the tests.

Everything here is written with explicit loops over pixels or indices and
shares no code with the package, so agreement is meaningful.
"""

import math

import numpy as np


# ---------------------------------------------------------------------------
# tensor ops


def conv2d_loops(x, w, b, stride, pad):
    n, cin, h, wd = x.shape
    cout, _, k, _ = w.shape
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((n, cout, ho, wo))
    for i in range(n):
        for o in range(cout):
            for r in range(ho):
                for c in range(wo):
                    acc = 0.0 if b is None else float(b[o])
                    for ci in range(cin):
                        for u in range(k):
                            for v in range(k):
                                rr = r * stride + u - pad
                                cc = c * stride + v - pad
                                if 0 <= rr < h and 0 <= cc < wd:
                                    acc += x[i, ci, rr, cc] * w[o, ci, u, v]
                    out[i, o, r, c] = acc
    return out


def bilinear_pixel(img, f, r, c):
    """Evaluate the half-pixel bilinear formula at output pixel (r, c)."""
    h, w = img.shape
    sy = min(max((r + 0.5) / f - 0.5, 0.0), h - 1)
    sx = min(max((c + 0.5) / f - 0.5, 0.0), w - 1)
    y0, x0 = int(math.floor(sy)), int(math.floor(sx))
    y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
    dy, dx = sy - y0, sx - x0
    return ((1 - dy) * (1 - dx) * img[y0, x0] + (1 - dy) * dx * img[y0, x1]
            + dy * (1 - dx) * img[y1, x0] + dy * dx * img[y1, x1])


def bilinear_loops(x, f):
    n, c, h, w = x.shape
    out = np.zeros((n, c, h * f, w * f))
    for i in range(n):
        for j in range(c):
            for r in range(h * f):
                for cc in range(w * f):
                    out[i, j, r, cc] = bilinear_pixel(x[i, j], f, r, cc)
    return out


def matmul_loops(a, b):
    m, k = a.shape
    _, p = b.shape
    out = np.zeros((m, p))
    for i in range(m):
        for j in range(p):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def max_scan(values):
    best = -math.inf
    for v in values:
        if v > best:
            best = v
    return best


# ---------------------------------------------------------------------------
# metrics


def mae_loops(p, g):
    h, w = p.shape
    s = 0.0
    for r in range(h):
        for c in range(w):
            s += abs(p[r, c] - (1.0 if g[r, c] else 0.0))
    return s / (h * w)


def adaptive_tau(p):
    total = 0.0
    for v in p.ravel():
        total += v
    return min(2 * total / p.size, 1 - 1e-8)


def fmeasure_loops(p, g):
    tau = adaptive_tau(p)
    tp = fp = fn = 0
    for v, t in zip(p.ravel(), g.ravel()):
        pos = v >= tau
        if pos and t:
            tp += 1
        elif pos:
            fp += 1
        elif t:
            fn += 1
    if tp == 0:
        return 0.0
    prec, rec = tp / (tp + fp), tp / (tp + fn)
    return 1.3 * prec * rec / (0.3 * prec + rec)


def emeasure_loops(p, g):
    tau = adaptive_tau(p)
    b = [1.0 if v >= tau else 0.0 for v in p.ravel()]
    gt = [1.0 if t else 0.0 for t in g.ravel()]
    n = len(b)
    if sum(gt) == 0:
        return 1 - sum(b) / n
    if sum(gt) == n:
        return sum(b) / n
    mb, mg = sum(b) / n, sum(gt) / n
    acc = 0.0
    for bi, gi in zip(b, gt):
        a, c = bi - mb, gi - mg
        xi = 2 * a * c / (a * a + c * c + 1e-8)
        acc += (xi + 1) ** 2 / 4
    return acc / n


def _mean(xs):
    return sum(xs) / len(xs)


def _var(xs, m):
    return sum((x - m) ** 2 for x in xs) / (len(xs) - 1) if len(xs) > 1 else 0.0


def _object(xs):
    if not xs:
        return 0.0
    m = _mean(xs)
    sd = math.sqrt(_var(xs, m))
    return 2 * m / (m * m + 1 + sd + 1e-8)


def _ssim_lists(ps, gs):
    if not ps:
        return 0.0
    x, y = _mean(ps), _mean(gs)
    n = len(ps)
    if n > 1:
        sx = sum((a - x) ** 2 for a in ps) / (n - 1)
        sy = sum((b - y) ** 2 for b in gs) / (n - 1)
        sxy = sum((a - x) * (b - y) for a, b in zip(ps, gs)) / (n - 1)
    else:
        sx = sy = sxy = 0.0
    alpha = 4 * x * y * sxy
    beta = (x * x + y * y) * (sx + sy)
    if alpha != 0:
        return alpha / (beta + 1e-8)
    return 1.0 if beta == 0 else 0.0


def smeasure_loops(p, g, alpha=0.5):
    h, w = p.shape
    gl = [[bool(g[r, c]) for c in range(w)] for r in range(h)]
    npos = sum(sum(row) for row in gl)
    if npos == 0:
        return max(0.0, min(1.0, 1 - float(p.mean())))
    if npos == h * w:
        return max(0.0, min(1.0, float(p.mean())))
    fg = [p[r, c] for r in range(h) for c in range(w) if gl[r][c]]
    bg = [1 - p[r, c] for r in range(h) for c in range(w) if not gl[r][c]]
    u = npos / (h * w)
    s_obj = u * _object(fg) + (1 - u) * _object(bg)
    # centroid split: rounded mean index plus one
    rs = [r for r in range(h) for c in range(w) if gl[r][c]]
    cs = [c for r in range(h) for c in range(w) if gl[r][c]]
    cy = int(round(_mean(rs))) + 1
    cx = int(round(_mean(cs))) + 1
    s_reg = 0.0
    for r0, r1 in ((0, cy), (cy, h)):
        for c0, c1 in ((0, cx), (cx, w)):
            wt = (r1 - r0) * (c1 - c0) / (h * w)
            if wt <= 0:
                continue
            ps = [p[r, c] for r in range(r0, r1) for c in range(c0, c1)]
            gs = [1.0 if gl[r][c] else 0.0 for r in range(r0, r1) for c in range(c0, c1)]
            s_reg += wt * _ssim_lists(ps, gs)
    return max(0.0, min(1.0, alpha * s_obj + (1 - alpha) * s_reg))


def pr_pooled(preds, gts, thresholds):
    pix = [(v, bool(t)) for p, g in zip(preds, gts) for v, t in zip(p.ravel(), g.ravel())]
    prec, rec = [], []
    for th in thresholds:
        tp = sum(1 for v, t in pix if v >= th and t)
        fp = sum(1 for v, t in pix if v >= th and not t)
        fn = sum(1 for v, t in pix if v < th and t)
        prec.append(tp / (tp + fp) if tp + fp else 0.0)
        rec.append(tp / (tp + fn) if tp + fn else 0.0)
    return np.array(prec), np.array(rec)


# ---------------------------------------------------------------------------
# edges


def dilate1(mask):
    """3 x 3 binary dilation with explicit loops."""
    h, w = mask.shape
    out = np.zeros_like(mask, dtype=bool)
    for r in range(h):
        for c in range(w):
            if mask[r, c]:
                out[max(r - 1, 0):r + 2, max(c - 1, 0):c + 2] = True
    return out


def tolerant_jaccard(edges, reference):
    """Jaccard index where a pixel counts as matched if the other set has a pixel within 1."""
    e, ref = edges.astype(bool), reference.astype(bool)
    matched = min(int((e & dilate1(ref)).sum()), int((ref & dilate1(e)).sum()))
    return matched / (e.sum() + ref.sum() - matched)
