"""Slow, loop-based reference implementations used only by the tests.

The reference computations never call into salaudit, so a bug in the
vectorized code cannot be mirrored here. Only ``random_network`` touches the
package, to build the model object under test alongside its plain spec.
"""

from __future__ import annotations

import math
from fractions import Fraction
from itertools import combinations

import numpy as np


# ---------------------------------------------------------------------------
# ranks and correlations


def brute_ranks(x):
    """1-based average ranks by counting."""
    x = list(map(float, x))
    out = []
    for xi in x:
        below = sum(1 for v in x if v < xi)
        equal = sum(1 for v in x if v == xi)
        out.append(1 + below + (equal - 1) / 2)
    return out


def brute_pearson(x, y):
    n = len(x)
    mx = sum(x) / n
    my = sum(y) / n
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = sum((a - mx) ** 2 for a in x)
    syy = sum((b - my) ** 2 for b in y)
    if sxx == 0 or syy == 0:
        return 0.0
    return sxy / math.sqrt(sxx * syy)


def brute_spearman(x, y):
    return brute_pearson(brute_ranks(x), brute_ranks(y))


# ---------------------------------------------------------------------------
# Krippendorff's alpha from the textbook coincidence-matrix definitions


def brute_alpha(matrix, level="ordinal"):
    """Rows are coders, columns are units. Exact rational arithmetic.

    o_ck counts ordered value pairs from distinct coders within a unit,
    each weighted 1/(m_u - 1). Ordinal distance for c <= k is
    (sum_{g=c..k} n_g - (n_c + n_k)/2)^2 over the sorted value list.
    """
    rows = [[Fraction(v).limit_denominator(10**9) for v in r] for r in matrix]
    n_rows, n_units = len(rows), len(rows[0])
    values = sorted({v for r in rows for v in r})
    pos = {v: i for i, v in enumerate(values)}
    V = len(values)
    o = [[Fraction(0)] * V for _ in range(V)]
    for u in range(n_units):
        col = [rows[r][u] for r in range(n_rows)]
        m = len(col)
        if m < 2:
            continue
        for a in range(m):
            for b in range(m):
                if a != b:
                    o[pos[col[a]]][pos[col[b]]] += Fraction(1, m - 1)
    n_c = [sum(o[c]) for c in range(V)]
    n = sum(n_c)

    def delta(c, k):
        if level == "interval":
            return (values[c] - values[k]) ** 2
        lo, hi = min(c, k), max(c, k)
        s = sum(n_c[g] for g in range(lo, hi + 1)) - (n_c[lo] + n_c[hi]) / 2
        return s * s

    d_o = sum(o[c][k] * delta(c, k) for c in range(V) for k in range(V))
    d_e = sum(n_c[c] * n_c[k] * delta(c, k) for c in range(V) for k in range(V))
    if d_e == 0:
        return float("nan")
    return float(1 - (n - 1) * d_o / d_e)


# ---------------------------------------------------------------------------
# direct network evaluation


def _conv(x, weight, bias, pad):
    h, w, cin = x.shape
    cout, _, kh, kw = weight.shape
    ho, wo = h + 2 * pad - kh + 1, w + 2 * pad - kw + 1
    out = np.zeros((ho, wo, cout))
    for i in range(ho):
        for j in range(wo):
            for o in range(cout):
                s = 0.0 if bias is None else float(bias[o])
                for a in range(kh):
                    for b in range(kw):
                        r, c = i + a - pad, j + b - pad
                        if 0 <= r < h and 0 <= c < w:
                            for ch in range(cin):
                                s += weight[o, ch, a, b] * x[r, c, ch]
                out[i, j, o] = s
    return out


def _maxpool(x, pattern):
    h, w, c = x.shape
    out = np.zeros((h // 2, w // 2, c))
    for i in range(h // 2):
        for j in range(w // 2):
            for ch in range(c):
                block = [x[2 * i + a, 2 * j + b, ch] for a in range(2) for b in range(2)]
                k = int(np.argmax(block))
                out[i, j, ch] = block[k]
                ordered = sorted(block, reverse=True)
                pattern.append(("pool", k, ordered[0] == ordered[1]))
    return out


def brute_network(spec, pixels):
    """Logits and activation pattern of a network described as plain data.

    ``spec`` is {"mean", "std", "layers": [(kind, params...)]} with kinds
    conv (weight OIHW, bias, pad), affine (scale, shift), relu, pool,
    flatten, dense (weight out x in, bias).
    """
    x = (np.asarray(pixels, dtype=np.float64) - spec["mean"]) / spec["std"]
    pattern = []
    for layer in spec["layers"]:
        kind = layer[0]
        if kind == "conv":
            x = _conv(x, layer[1], layer[2], layer[3])
        elif kind == "affine":
            x = x * layer[1] + layer[2]
        elif kind == "relu":
            pattern.append(("relu", tuple((x > 0).ravel())))
            x = np.maximum(x, 0.0)
        elif kind == "pool":
            x = _maxpool(x, pattern)
        elif kind == "flatten":
            x = x.reshape(-1)
        elif kind == "dense":
            flat = x.reshape(-1)
            y = np.array([sum(layer[1][o, i] * flat[i] for i in range(flat.size)) for o in range(layer[1].shape[0])])
            x = y if layer[2] is None else y + layer[2]
    return np.asarray(x, dtype=np.float64), tuple(pattern)


def brute_softmax(z):
    m = max(z)
    e = [math.exp(v - m) for v in z]
    s = sum(e)
    return [v / s for v in e]


# ---------------------------------------------------------------------------
# perturbation metrics by direct simulation


def brute_aopc(score, pixels, order, replacement, L):
    """AOPC by re-evaluating ``score`` on each cumulatively perturbed image."""
    x = np.array(pixels, dtype=np.float64)
    w = x.shape[1]
    f0 = score(x)
    total = 0.0
    for k in range(L):
        r, c = divmod(int(order[k]), w)
        x[r, c] = replacement[k]
        total += f0 - score(x)
    return total / (L + 1)


def all_permutation_mean_aopc(score, pixels, mu, L):
    """Mean AOPC over every permutation of every pixel (tiny images only)."""
    from itertools import permutations

    h, w, c = np.shape(pixels)
    vals = []
    for perm in permutations(range(h * w)):
        vals.append(brute_aopc(score, pixels, perm, [mu] * L, L))
    return sum(vals) / len(vals)


def pairs(n):
    return list(combinations(range(n), 2))


# ---------------------------------------------------------------------------
# random small networks and finite differences


def random_network(rng, max_conv=3):
    """(Network, plain spec) pair with 1..max_conv conv blocks and one dense layer."""
    from salaudit.model import AffineChannel, Conv2D, Dense, Flatten, MaxPool2x2, Network, ReLU, Softmax

    h = w = int(rng.integers(4, 9))
    c = int(rng.integers(1, 4))
    mean = rng.uniform(0.3, 0.6, c)
    std = rng.uniform(0.2, 0.4, c)
    layers, spec = [], []
    shape = (h, w, c)
    for _ in range(int(rng.integers(1, max_conv + 1))):
        cout = int(rng.integers(2, 5))
        k = int(rng.integers(1, 4))
        pad = int(rng.integers(0, 2)) if k > 1 else 0
        if shape[0] + 2 * pad - k + 1 < 2:
            pad = k // 2
        weight = rng.normal(0, 0.6, (cout, shape[2], k, k))
        bias = rng.normal(0, 0.1, cout) if rng.random() < 0.5 else None
        layers.append(Conv2D(weight, bias, pad))
        spec.append(("conv", weight, bias, pad))
        shape = (shape[0] + 2 * pad - k + 1, shape[1] + 2 * pad - k + 1, cout)
        if rng.random() < 0.5:
            scale, shift = rng.uniform(0.5, 1.5, cout), rng.normal(0, 0.1, cout)
            layers.append(AffineChannel(scale, shift))
            spec.append(("affine", scale, shift))
        layers.append(ReLU())
        spec.append(("relu",))
        if shape[0] >= 4 and rng.random() < 0.5:
            layers.append(MaxPool2x2())
            spec.append(("pool",))
            shape = (shape[0] // 2, shape[1] // 2, shape[2])
    layers.append(Flatten())
    spec.append(("flatten",))
    k_out = int(rng.integers(2, 6))
    dw = rng.normal(0, 0.5, (k_out, int(np.prod(shape))))
    db = rng.normal(0, 0.1, k_out) if rng.random() < 0.5 else None
    layers.append(Dense(dw, db))
    spec.append(("dense", dw, db))
    layers.append(Softmax())
    net = Network(layers, (h, w, c), k_out, mean=mean, std=std)
    return net, {"mean": mean, "std": std, "layers": spec}


def finite_difference_gradient(spec, pixels, class_index, step=1e-3):
    """Numerical d logit / d pixel with kink-aware differencing.

    Central differences where both probes keep the activation pattern of
    ``pixels``; a one-sided difference on the side that keeps it otherwise.
    Coordinates where neither probe does are returned as NaN.
    """
    x = np.asarray(pixels, dtype=np.float64)
    f0, p0 = brute_network(spec, x)
    grad = np.full(x.shape, np.nan)
    for idx in np.ndindex(x.shape):
        xp = x.copy()
        xm = x.copy()
        xp[idx] += step
        xm[idx] -= step
        fp, pp = brute_network(spec, xp)
        fm, pm = brute_network(spec, xm)
        if pp == p0 and pm == p0:
            grad[idx] = (fp[class_index] - fm[class_index]) / (2 * step)
        elif pp == p0:
            grad[idx] = (fp[class_index] - f0[class_index]) / step
        elif pm == p0:
            grad[idx] = (f0[class_index] - fm[class_index]) / step
    return grad


def relative_gradient_error(analytic, numeric):
    ok = ~np.isnan(numeric)
    scale = np.max(np.abs(numeric[ok]))
    return float(np.max(np.abs(analytic[ok] - numeric[ok])) / scale), int((~ok).sum())
