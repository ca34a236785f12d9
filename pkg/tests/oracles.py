"""Direct, loop-based transcriptions of the metric formulas.

Deliberately naive: no vectorisation, no summed-area tables, no shared code
with the package, so they can serve as independent references.
"""

import math


def flat(a):
    return [float(v) for v in a.ravel()]


def entropy(a, levels=256, vmax=255.0):
    values = flat(a)
    counts = {}
    for v in values:
        b = int(round(min(max(v, 0.0), vmax) * (levels - 1) / vmax))
        counts[b] = counts.get(b, 0) + 1
    n = len(values)
    return -sum((c / n) * math.log2(c / n) for c in counts.values())


def correlation(x, y):
    xs, ys = flat(x), flat(y)
    n = len(xs)
    mx, my = sum(xs) / n, sum(ys) / n
    cov = sum((a - mx) * (b - my) for a, b in zip(xs, ys)) / n
    vx = sum((a - mx) ** 2 for a in xs) / n
    vy = sum((b - my) ** 2 for b in ys) / n
    return cov / math.sqrt(vx * vy)


def psnr(x, y, vmax=255.0):
    xs, ys = flat(x), flat(y)
    mse = sum((a - b) ** 2 for a, b in zip(xs, ys)) / len(xs)
    return math.inf if mse == 0 else 10 * math.log10(vmax**2 / mse)


def ssim2d(x, y, window, c1, c2, c3, alpha=1.0, beta=1.0, gamma=1.0):
    """Three-factor SSIM averaged over every fully contained window."""
    h, w = x.shape
    scores = []
    for i in range(h - window + 1):
        for j in range(w - window + 1):
            xs = [float(x[i + a, j + b]) for a in range(window) for b in range(window)]
            ys = [float(y[i + a, j + b]) for a in range(window) for b in range(window)]
            n = len(xs)
            ux, uy = sum(xs) / n, sum(ys) / n
            vx = sum((v - ux) ** 2 for v in xs) / n
            vy = sum((v - uy) ** 2 for v in ys) / n
            cxy = sum((a - ux) * (b - uy) for a, b in zip(xs, ys)) / n
            sx, sy = math.sqrt(vx), math.sqrt(vy)
            lum = (2 * ux * uy + c1) / (ux**2 + uy**2 + c1)
            con = (2 * sx * sy + c2) / (vx + vy + c2)
            st = (cxy + c3) / (sx * sy + c3)
            scores.append(lum**alpha * con**beta * st**gamma)
    return sum(scores) / len(scores)


def ssim_standard2d(x, y, window, c1, c2):
    """Two-term simplified SSIM (Wang et al. form) for the identity check."""
    h, w = x.shape
    scores = []
    for i in range(h - window + 1):
        for j in range(w - window + 1):
            xs = [float(x[i + a, j + b]) for a in range(window) for b in range(window)]
            ys = [float(y[i + a, j + b]) for a in range(window) for b in range(window)]
            n = len(xs)
            ux, uy = sum(xs) / n, sum(ys) / n
            vx = sum((v - ux) ** 2 for v in xs) / n
            vy = sum((v - uy) ** 2 for v in ys) / n
            cxy = sum((a - ux) * (b - uy) for a, b in zip(xs, ys)) / n
            scores.append(((2 * ux * uy + c1) * (2 * cxy + c2)) / ((ux**2 + uy**2 + c1) * (vx + vy + c2)))
    return sum(scores) / len(scores)


def laplacian_replicate(img2d):
    """4-neighbour Laplacian with edge replication, one pixel at a time."""
    h, w = img2d.shape
    out = [[0.0] * w for _ in range(h)]
    for i in range(h):
        for j in range(w):
            def px(a, b):
                return float(img2d[min(max(a, 0), h - 1), min(max(b, 0), w - 1)])
            out[i][j] = px(i - 1, j) + px(i + 1, j) + px(i, j - 1) + px(i, j + 1) - 4 * px(i, j)
    return out
