"""Independent reference computations used by the test-suite.

Nothing here imports the code under test; each oracle recomputes its
quantity the slow, obvious way (python loops, mpmath, brute-force sorts).
"""

import math

import mpmath
import numpy as np

mpmath.mp.dps = 50


def naive_dot(a, b):
    total = 0.0
    for x, y in zip(a, b):
        total += float(x) * float(y)
    return total


def mp_contrastive_loss(S, gold):
    """Mean over rows of -log(exp(S[i, gold[i]]) / sum_j exp(S[i, j])) in 50-digit arithmetic."""
    total = mpmath.mpf(0)
    for i, row in enumerate(S):
        denom = mpmath.fsum(mpmath.exp(mpmath.mpf(float(s))) for s in row)
        total += -mpmath.log(mpmath.exp(mpmath.mpf(float(row[gold[i]]))) / denom)
    return float(total / len(S))


def mp_softmax(scores):
    exps = [mpmath.exp(mpmath.mpf(float(s))) for s in scores]
    z = mpmath.fsum(exps)
    return [float(e / z) for e in exps]


def direct_has_ans(probs):
    prod = 1.0
    for p in probs:
        prod = prod * (1.0 - p)
    return 1.0 - prod


def dense_bilinear_loss(Xq, Xc, Wq, Wc, gold):
    """Contrastive loss written out densely: S = (Xq Wq^T)(Xc Wc^T)^T, then log-sum-exp."""
    S = (Xq @ Wq.T) @ (Xc @ Wc.T).T
    out = 0.0
    for i, row in enumerate(S):
        mx = row.max()
        out += mx + math.log(np.exp(row - mx).sum()) - row[gold[i]]
    return out / len(S)


def central_differences(f, W, h=1e-5):
    """Gradient of scalar f(W) by central differences over every entry of W."""
    g = np.zeros_like(W)
    it = np.nditer(W, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = W[idx]
        W[idx] = old + h
        fp = f(W)
        W[idx] = old - h
        fm = f(W)
        W[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g


def brute_force_rank(keys, vectors, query, top_m):
    """Full scan, full sort, softmax, noisy-OR -- all in plain python.

    Returns [(passage_id, has_ans, [(ordinal, p), ...])] sorted like the engine.
    """
    scored = []
    for key, row in zip(keys, vectors):
        scored.append((-naive_dot(row, query), tuple(key)))
    scored.sort()
    top = scored[:top_m]
    best = -top[0][0]
    exps = [math.exp(-neg - best) for neg, _ in top]
    z = math.fsum(exps)
    groups = {}
    for (_, key), e in zip(top, exps):
        groups.setdefault(key[0], []).append((key[1], e / z))
    out = []
    for pid, sents in groups.items():
        miss = 1.0
        for _, p in sents:
            miss *= 1.0 - p
        out.append((pid, 1.0 - miss, sents))
    out.sort(key=lambda t: (-t[1], t[0]))
    return out


def normalize(text):
    import unicodedata
    return " ".join(unicodedata.normalize("NFC", text).lower().split())


def brute_force_topk(rankings, passage_texts, answers_per_question, ks):
    """Top-k accuracy from explicit per-question passage rankings."""
    acc = {}
    for k in ks:
        hits = 0
        for ranked, answers in zip(rankings, answers_per_question):
            if any(normalize(a) in normalize(passage_texts[pid])
                   for pid in ranked[:k] for a in answers):
                hits += 1
        acc[k] = hits / len(rankings)
    return acc
