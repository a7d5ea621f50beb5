"""Training losses and their analytic gradients.

Three terms, summed with unit weights:
  * a memory-diversity penalty on the normalized per-branch memories, maximal
    (value 1) when every branch stores the same normalized memory;
  * a cross-entropy over optimally matched (label, branch) pairs, with the
    assignment treated as a constant (no gradient through it);
  * a distribution term between the ground truth and the branch-averaged
    prediction.

All gradients are hand-derived and verified against central finite
differences by the training module's gradient checker. The min/max used to
normalize each memory are treated as detached constants in the backward
pass; freezing them during finite differencing checks exactly the function
the gradient belongs to.
"""

from dataclasses import dataclass

import numpy as np

from . import matching, model
from .linalg import DimensionError

LOG_FLOOR = 1e-10
DEGENERATE_DEN = 1e-12


@dataclass
class LossBundle:
    l_sub: float
    l_mat: float
    l_kl: float
    total: float
    grads: list   # BranchParams-shaped, mirrors ModelParams.branches


def normalize_phi(M):
    """Min-max normalization over all entries of one memory; a constant
    matrix maps to all zeros."""
    lo, hi = float(np.min(M)), float(np.max(M))
    if hi == lo:
        return np.zeros_like(M)
    return (M - lo) / (hi - lo)


def phi_stats(memories):
    """(min, max) per memory; passed back in to freeze the normalization."""
    return [(float(np.min(M)), float(np.max(M))) for M in memories]


def _apply_phi(M, lo, hi):
    if hi == lo:
        return np.zeros_like(M)
    return (M - lo) / (hi - lo)


def subjectivity_loss(memories, stats=None):
    """Diversity penalty across the N memories. Returns (value, per-memory
    gradients). `stats` optionally fixes the per-memory min/max (the detached
    constants of the normalization map)."""
    if len(memories) < 1:
        raise ValueError("need at least one memory")
    shape = memories[0].shape
    for M in memories:
        if M.shape != shape:
            raise DimensionError("memories must share a shape")
    if stats is None:
        stats = phi_stats(memories)
    n = len(memories)
    phis = [_apply_phi(M, lo, hi) for M, (lo, hi) in zip(memories, stats)]
    mean_phi = sum(phis) / n
    den_raw = float(np.sum(mean_phi ** 2))
    den = den_raw if den_raw != 0.0 else DEGENERATE_DEN
    devs = [p - mean_phi for p in phis]
    s_terms = [float(np.sum(dv ** 2)) for dv in devs]
    value = 1.0 - sum(s / den for s in s_terms) / n

    grads = []
    s_total = sum(s_terms)
    for dv, (lo, hi) in zip(devs, stats):
        # d/dphi_m of -(1/n) sum_n S_n/den; the cross terms over branches
        # cancel because the deviations sum to zero
        g_phi = -(2.0 / n) * dv / den + (2.0 * s_total / (n * n)) * mean_phi / (den * den)
        scale = 0.0 if hi == lo else 1.0 / (hi - lo)
        grads.append(g_phi * scale)
    return value, grads


def kl_loss(d, d_hat):
    """Cross-entropy of the predicted distribution against the ground truth,
    with the prediction floored inside the log. Zero-probability ground-truth
    entries contribute exactly 0. Returns (value, gradient wrt d_hat)."""
    if d.shape != d_hat.shape:
        raise DimensionError(f"distribution shapes differ: {d.shape} vs {d_hat.shape}")
    support = d > 0.0
    floored = np.maximum(d_hat, LOG_FLOOR)
    value = -float(np.sum(d[support] * np.log(floored[support])))
    grad = np.zeros_like(d_hat)
    live = support & (d_hat >= LOG_FLOOR)
    grad[live] = -d[live] / d_hat[live]
    return value, grad


def predict_distribution(probs, sigma=None):
    """Branch-averaged distribution; the average is invariant to the
    assignment (it only permutes the summands)."""
    stack = np.asarray(probs)
    return stack.mean(axis=0)


def assign_sample(labels, probs):
    """Optimal label-to-branch assignment for one sample."""
    cost = matching.build_cost_matrix(labels, probs)
    return matching.hungarian(cost)


def matching_loss(batch_labels, batch_probs, mode="match"):
    """Average per-pair cross-entropy over the batch. mode="match" pairs
    labels to branches via the optimal assignment; mode="ce" pairs the sorted
    labels positionally. Returns (value, per-sample list of per-branch
    logit-gradients, per-sample assignments)."""
    if mode not in ("match", "ce"):
        raise ValueError(f"unknown loss mode {mode!r}")
    batch = len(batch_labels)
    n = len(batch_probs[0])
    weight = 1.0 / (batch * n)
    value = 0.0
    logit_grads = []
    sigmas = []
    for labels, probs in zip(batch_labels, batch_probs):
        if mode == "match":
            sigma = assign_sample(labels, probs).sigma
        else:
            sigma = list(range(n))
        sigmas.append(sigma)
        g = [np.zeros_like(p) for p in probs]
        for slot, label in enumerate(labels):
            m = sigma[slot]
            p = probs[m]
            value -= weight * float(np.log(p[label]))
            # combined softmax + NLL gradient at the matched branch's logits
            g[m] += weight * p
            g[m][label] -= weight
        logit_grads.append(g)
    return value, logit_grads, sigmas


def _softmax_backward(p, g_p):
    # rows of p are softmax outputs; pullback of g_p through the softmax
    dot = np.sum(p * g_p, axis=-1, keepdims=True)
    return p * (g_p - dot)


def total_loss(features, batch_labels, batch_dists, params,
               use_subjectivity=True, loss_mode="match", phi_stats_override=None):
    """Forward + backward over a batch. features: B x d1 array;
    batch_labels: per-sample label lists (length N each); batch_dists:
    B x C ground-truth distributions. Returns a LossBundle whose gradient
    set mirrors the parameter shapes."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise DimensionError("features must be a batch matrix")
    batch = features.shape[0]
    if batch == 0:
        raise ValueError("empty batch")
    dists = np.asarray(batch_dists, dtype=np.float64)
    n_branches = params.dims.N

    fwd = model.forward_batch(params, features)
    # per-sample branch probabilities, B x N x C
    probs = np.stack([br["probs"] for br in fwd], axis=1)

    l_mat, logit_grads, _ = matching_loss(
        batch_labels, [list(p) for p in probs], mode=loss_mode)

    d_hat = probs.mean(axis=1)
    l_kl = 0.0
    g_dhat = np.zeros_like(d_hat)
    for i in range(batch):
        v, g = kl_loss(dists[i], d_hat[i])
        l_kl += v / batch
        g_dhat[i] = g / batch

    if use_subjectivity:
        memories = [b.memory for b in params.branches]
        if memories[0].shape[1] > 0:
            l_sub, mem_grads = subjectivity_loss(memories, stats=phi_stats_override)
        else:
            l_sub, mem_grads = 0.0, [np.zeros_like(m) for m in memories]
    else:
        l_sub, mem_grads = 0.0, [np.zeros_like(b.memory) for b in params.branches]

    grads = model.zero_grads(params)
    for n, (branch, br_fwd) in enumerate(zip(params.branches, fwd)):
        p = br_fwd["probs"]                                     # B x C
        # distribution-term gradient arrives at the probabilities, the
        # matched-pair term directly at the logits
        g_logits = _softmax_backward(p, g_dhat / n_branches)
        for i in range(batch):
            g_logits[i] += logit_grads[i][n]

        f_mem = br_fwd["f_mem"]
        g = grads[n]
        g.classifier += g_logits.T @ f_mem
        g_fmem = g_logits @ branch.classifier                    # B x d2
        if branch.memory.shape[1] > 0:
            att = br_fwd["attention"]                            # B x K
            g.memory += g_fmem.T @ att                           # read: f' = M a
            g_att = g_fmem @ branch.memory
            g_scores = _softmax_backward(att, g_att)
            g.memory += br_fwd["f"].T @ g_scores                 # scores: f . m_k
            g_f = g_scores @ branch.memory.T
        else:
            g_f = g_fmem
        g_pre = g_f * (br_fwd["f"] > 0.0)
        g.embed_weight += g_pre.T @ features
        g.embed_bias += g_pre.sum(axis=0)
        g.memory += mem_grads[n]

    total = l_sub + l_mat + l_kl
    return LossBundle(l_sub=l_sub, l_mat=l_mat, l_kl=l_kl, total=total, grads=grads)
