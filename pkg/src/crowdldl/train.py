"""Deterministic mini-batch training: Adam with step decay and coupled L2
weight decay, a finite-difference gradient checker, and the ablation switches
(single/multi branch, memory on/off, positional CE vs optimal matching,
diversity loss on/off)."""

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from . import losses, metrics, model
from .linalg import rng_stream, substream


@dataclass
class TrainConfig:
    lr: float = 1e-5
    lr_decay: float = 0.1
    decay_every: int = 10
    weight_decay: float = 5e-5
    epochs: int = 50
    batch_size: int = 32
    seed: int = 0
    d2: int = 8
    K: int = 16
    # ablations
    multi_branch: bool = True
    use_memory: bool = True
    use_subjectivity_loss: bool = True
    loss_mode: str = "match"   # "match" | "ce"

    def validate(self):
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay must be in (0, 1]")
        if self.epochs < 1 or self.batch_size < 1 or self.decay_every < 1:
            raise ValueError("epochs, batch_size, decay_every must be >= 1")
        if self.loss_mode not in ("match", "ce"):
            raise ValueError(f"unknown loss_mode {self.loss_mode!r}")


@dataclass
class AdamState:
    m: list                 # first moments, parameter-shaped
    v: list                 # second moments
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @staticmethod
    def for_params(params):
        return AdamState(m=model.zero_grads(params), v=model.zero_grads(params))


def adam_step(params, grads, state, lr, weight_decay=0.0):
    """In-place Adam update with bias correction; weight decay folded into
    the gradient before the moment update (coupled L2)."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for branch, g_branch, m_branch, v_branch in zip(params.branches, grads, state.m, state.v):
        for (name, p), (_, g), (_, m), (_, v) in zip(
                branch.blocks(), g_branch.blocks(), m_branch.blocks(), v_branch.blocks()):
            if p.shape != g.shape:
                raise ValueError(f"gradient shape mismatch on {name}")
            g_eff = g + weight_decay * p
            m += (1 - b1) * (g_eff - m)
            v += (1 - b2) * (g_eff * g_eff - v)
            p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def effective_lr(config, epoch):
    return config.lr * config.lr_decay ** (epoch // config.decay_every)


def model_dims(config, d1, C, N):
    n_branches = N if config.multi_branch else 1
    K = config.K if config.use_memory else 0
    return model.Dims(d1=d1, d2=config.d2, K=K, C=C, N=n_branches)


def _prepare(samples, config, C):
    features = np.stack([s.features for s in samples])
    dists = np.stack([s.distribution for s in samples])
    if config.multi_branch:
        labels = [list(s.votes) for s in samples]
    else:
        # single-branch baseline: plain CE to the dominant category
        labels = [[int(np.argmax(s.distribution))] for s in samples]
    return features, labels, dists


def heldout_kl_loss(params, features, dists):
    """Average distribution loss on a held-out set, no gradients."""
    fwd = model.forward_batch(params, features)
    d_hat = np.mean([br["probs"] for br in fwd], axis=0)
    total = 0.0
    for d, dh in zip(dists, d_hat):
        total += losses.kl_loss(d, dh)[0]
    return total / len(dists)


def train(config, train_set, eval_set):
    """Returns (final params, best params by held-out distribution loss,
    epoch log). Fully determined by (config, datasets)."""
    config.validate()
    if not train_set or not eval_set:
        raise ValueError("empty dataset")
    d1 = train_set[0].features.shape[0]
    C = train_set[0].distribution.shape[0]
    N = len(train_set[0].votes)
    dims = model_dims(config, d1, C, N)
    params = model.init(dims, rng_stream(config.seed, "init"))
    state = AdamState.for_params(params)

    loss_mode = config.loss_mode if config.multi_branch else "ce"
    tr_feat, tr_labels, tr_dists = _prepare(train_set, config, C)
    ev_feat, _, ev_dists = _prepare(eval_set, config, C)

    log = []
    best_params = params.copy()
    best_kl = np.inf
    n_train = len(train_set)
    for epoch in range(config.epochs):
        lr = effective_lr(config, epoch)
        order = substream(config.seed, "shuffle", epoch).permutation(n_train)
        sums = np.zeros(4)
        for start in range(0, n_train, config.batch_size):
            idx = order[start:start + config.batch_size]
            bundle = losses.total_loss(
                tr_feat[idx], [tr_labels[i] for i in idx], tr_dists[idx], params,
                use_subjectivity=config.use_subjectivity_loss, loss_mode=loss_mode)
            adam_step(params, bundle.grads, state, lr, config.weight_decay)
            sums += len(idx) * np.array([bundle.l_sub, bundle.l_mat, bundle.l_kl, bundle.total])
        train_losses = sums / n_train

        eval_kl = heldout_kl_loss(params, ev_feat, ev_dists)
        report = metrics.evaluate(eval_set, params)
        record = {
            "epoch": epoch, "lr": lr,
            "l_sub": train_losses[0], "l_mat": train_losses[1],
            "l_kl": train_losses[2], "total": train_losses[3],
            "eval_l_kl": eval_kl, "eval": asdict(report),
        }
        log.append(record)
        if eval_kl < best_kl:
            best_kl = eval_kl
            best_params = params.copy()
    return params, best_params, log


def write_epoch_log(log, path):
    with open(path, "w", encoding="utf-8") as fh:
        for record in log:
            fh.write(json.dumps(record) + "\n")


def grad_check(params, features, batch_labels, batch_dists,
               use_subjectivity=True, loss_mode="match", step=1e-5):
    """Central finite differences against the analytic gradients, per
    parameter block. The memory-normalization min/max are frozen at their
    unperturbed values, matching their detached-constant role in the
    backward pass. Returns {block name: max relative error}."""
    frozen = losses.phi_stats([b.memory for b in params.branches]) \
        if params.branches[0].memory.shape[1] > 0 else None

    def loss_at(p):
        return losses.total_loss(
            features, batch_labels, batch_dists, p,
            use_subjectivity=use_subjectivity, loss_mode=loss_mode,
            phi_stats_override=frozen).total

    bundle = losses.total_loss(
        features, batch_labels, batch_dists, params,
        use_subjectivity=use_subjectivity, loss_mode=loss_mode,
        phi_stats_override=frozen)

    report = {}
    work = params.copy()
    for n, branch in enumerate(work.branches):
        for (name, block), (_, g_block) in zip(branch.blocks(), bundle.grads[n].blocks()):
            if block.size == 0:
                continue
            worst = 0.0
            flat = block.reshape(-1)
            g_flat = g_block.reshape(-1)
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + step
                up = loss_at(work)
                flat[j] = orig - step
                down = loss_at(work)
                flat[j] = orig
                fd = (up - down) / (2 * step)
                rel = abs(g_flat[j] - fd) / (abs(fd) + 1e-8)
                worst = max(worst, rel)
            key = f"branch{n}.{name}"
            report[key] = worst
    return report
