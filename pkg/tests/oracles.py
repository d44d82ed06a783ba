"""Independent brute-force oracles shared by the unit and acceptance tests.

These deliberately avoid the library's vectorized code paths: plain Python
loops and direct formulas only, so they stay an independent route.
"""

import math

import numpy as np
import torch


def closed_form_kappa(y_true, y_pred) -> float:
    """Chance-corrected agreement from explicit confusion-matrix arithmetic."""
    labels = sorted(set(y_true) | set(y_pred), key=str)
    index = {lab: i for i, lab in enumerate(labels)}
    k = len(labels)
    confusion = [[0] * k for _ in range(k)]
    for t, p in zip(y_true, y_pred):
        confusion[index[t]][index[p]] += 1
    n = len(y_true)
    p_o = sum(confusion[i][i] for i in range(k)) / n
    row = [sum(confusion[i]) / n for i in range(k)]
    col = [sum(confusion[i][j] for i in range(k)) / n for j in range(k)]
    p_e = sum(r * c for r, c in zip(row, col))
    if p_e >= 1.0:
        return 1.0
    return (p_o - p_e) / (1.0 - p_e)


def brute_force_map(queries, pool, relevance) -> float:
    """mAP by definition: cosine ranking (stable ties), precision at relevant ranks."""
    aps = []
    for qi in range(len(queries)):
        if not any(relevance[qi]):
            continue
        q = np.asarray(queries[qi], dtype=np.float64)
        sims = []
        for pi in range(len(pool)):
            p = np.asarray(pool[pi], dtype=np.float64)
            sims.append(float(q @ p / (np.linalg.norm(q) * np.linalg.norm(p))))
        order = sorted(range(len(pool)), key=lambda i: (-sims[i], i))
        hits = 0
        precisions = []
        for rank, i in enumerate(order, start=1):
            if relevance[qi][i]:
                hits += 1
                precisions.append(hits / rank)
        aps.append(sum(precisions) / len(precisions))
    return sum(aps) / len(aps)


def brute_force_ce(scores, labels) -> float:
    """Softmax cross-entropy by the direct formula."""
    total = 0.0
    for row, y in zip(scores, labels):
        denom = sum(math.exp(s) for s in row)
        total += -math.log(math.exp(row[y]) / denom)
    return total / len(labels)


def brute_force_l1(a, b) -> float:
    total = 0.0
    count = 0
    for ra, rb in zip(a, b):
        for va, vb in zip(ra, rb):
            total += abs(va - vb)
            count += 1
    return total / count


def brute_force_cosine_loss(a, b) -> float:
    losses = []
    for ra, rb in zip(a, b):
        ra = np.asarray(ra, dtype=np.float64)
        rb = np.asarray(rb, dtype=np.float64)
        cos = float(ra @ rb / (np.linalg.norm(ra) * np.linalg.norm(rb)))
        losses.append(1.0 - cos)
    return float(np.mean(losses))


def brute_force_nt_xent(zi, zt, tau, intra=True) -> float:
    """Explicit enumeration over every anchor/candidate pair."""
    zi = np.asarray(zi, dtype=np.float64)
    zt = np.asarray(zt, dtype=np.float64)
    zi = zi / np.linalg.norm(zi, axis=1, keepdims=True)
    zt = zt / np.linalg.norm(zt, axis=1, keepdims=True)
    n = zi.shape[0]
    vectors = np.concatenate([zi, zt], axis=0)
    modality = [0] * n + [1] * n
    losses = []
    for a in range(2 * n):
        pos = (a + n) % (2 * n)
        if intra:
            candidates = [j for j in range(2 * n) if j != a]
        else:
            candidates = [j for j in range(2 * n) if modality[j] != modality[a]]
        sims = {j: float(vectors[a] @ vectors[j]) / tau for j in candidates}
        denom = sum(math.exp(s) for s in sims.values())
        losses.append(-math.log(math.exp(sims[pos]) / denom))
    return float(np.mean(losses))


def central_difference_grads(fn, tensors, h=1e-6):
    """Numerical gradients of a scalar torch function by central differences."""
    grads = []
    for t in tensors:
        grad = torch.zeros_like(t)
        flat = t.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + h
            up = fn(*tensors).item()
            flat[i] = orig - h
            down = fn(*tensors).item()
            flat[i] = orig
            gflat[i] = (up - down) / (2 * h)
        grads.append(grad)
    return grads
