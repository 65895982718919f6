"""Naive reference implementations used as independent test oracles.

``naive_ties_merge`` is a per-coordinate Python transcription of the
trim / elect / disjoint-merge phases, sharing only the library's documented
conventions (canonical input order, weights normalized to mean one, trim
ties broken toward lower indices).  It must agree with the production path
bit-for-bit on float32 outputs.
"""

from __future__ import annotations

import math

import numpy as np


def naive_ties_merge(vectors, density, weights=None) -> np.ndarray:
    vecs = [np.asarray(v, dtype=np.float32).ravel() for v in vectors]
    k = len(vecs)
    dim = vecs[0].size
    w = [1.0] * k if weights is None else [float(x) for x in weights]

    order = sorted(
        range(k),
        key=lambda t: (np.asarray(vecs[t], dtype=np.float64).tobytes(), w[t].hex()),
    )
    vecs = [vecs[t] for t in order]
    w = [w[t] for t in order]

    scale = k / sum(w)
    weighted = [[(w[t] * scale) * float(vecs[t][j]) for j in range(dim)] for t in range(k)]

    m = min(dim, max(1, math.ceil(density * dim)))
    kept = []
    for t in range(k):
        magnitudes = [abs(x) for x in weighted[t]]
        threshold = sorted(magnitudes)[dim - m]
        keep = [x > threshold for x in magnitudes]
        need = m - sum(keep)
        for j in range(dim):
            if need == 0:
                break
            if not keep[j] and magnitudes[j] == threshold:
                keep[j] = True
                need -= 1
        kept.append([weighted[t][j] if keep[j] else 0.0 for j in range(dim)])

    out = []
    for j in range(dim):
        total = 0.0
        for t in range(k):
            total += kept[t][j]
        if total > 0.0:
            aligned = [kept[t][j] for t in range(k) if kept[t][j] > 0.0]
        elif total < 0.0:
            aligned = [kept[t][j] for t in range(k) if kept[t][j] < 0.0]
        else:
            aligned = []
        if aligned:
            acc = 0.0
            for value in aligned:
                acc += value
            out.append(acc / len(aligned))
        else:
            out.append(0.0)
    return np.array(out, dtype=np.float32)
