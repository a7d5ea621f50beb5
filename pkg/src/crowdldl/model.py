"""Multi-branch prediction head: shared feature in, one branch per annotator.

Each branch embeds the shared feature with its own FC+ReLU, reads its own
memory matrix through dot-product attention, and classifies the memory-read
feature with a bias-free softmax layer. K=0 switches the memory stage to an
identity bypass. Parameters are never shared across branches.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .linalg import DimensionError, softmax, xavier_uniform

CHECKPOINT_MAGIC = b"CLDL"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Dims:
    d1: int   # shared feature size
    d2: int   # branch feature / memory slot size
    K: int    # memory slots per branch, 0 = bypass
    C: int    # categories
    N: int    # branches


@dataclass
class BranchParams:
    embed_weight: np.ndarray   # d2 x d1
    embed_bias: np.ndarray     # d2
    memory: np.ndarray         # d2 x K (columns are slots)
    classifier: np.ndarray     # C x d2

    def blocks(self):
        return [("embed_weight", self.embed_weight), ("embed_bias", self.embed_bias),
                ("memory", self.memory), ("classifier", self.classifier)]


@dataclass
class ModelParams:
    branches: list
    dims: Dims

    def copy(self):
        return ModelParams(
            branches=[BranchParams(b.embed_weight.copy(), b.embed_bias.copy(),
                                   b.memory.copy(), b.classifier.copy())
                      for b in self.branches],
            dims=Dims(**vars(self.dims)),
        )


@dataclass
class BranchTrace:
    f: np.ndarray          # embedded feature, d2
    attention: np.ndarray  # K weights (empty when K=0)
    f_mem: np.ndarray      # memory-read feature, d2
    probs: np.ndarray      # C


@dataclass
class ForwardTrace:
    f_obj: np.ndarray
    branches: list         # one BranchTrace per model branch


def init(dims, rng):
    """Xavier-uniform weights and memories, zero embed biases."""
    branches = []
    for _ in range(dims.N):
        branches.append(BranchParams(
            embed_weight=xavier_uniform(dims.d2, dims.d1, rng),
            embed_bias=np.zeros(dims.d2),
            memory=(xavier_uniform(dims.d2, dims.K, rng) if dims.K > 0
                    else np.zeros((dims.d2, 0))),
            classifier=xavier_uniform(dims.C, dims.d2, rng),
        ))
    return ModelParams(branches=branches, dims=dims)


def embed(branch, f_obj):
    if f_obj.shape != (branch.embed_weight.shape[1],):
        raise DimensionError(f"feature shape {f_obj.shape} vs embed {branch.embed_weight.shape}")
    return np.maximum(branch.embed_weight @ f_obj + branch.embed_bias, 0.0)


def memory_attend(branch, f):
    """Attention read over memory slots; K=0 is an exact identity bypass."""
    if branch.memory.shape[1] == 0:
        return np.zeros(0), f
    if f.shape != (branch.memory.shape[0],):
        raise DimensionError(f"feature shape {f.shape} vs memory {branch.memory.shape}")
    attention = softmax(f @ branch.memory)
    return attention, branch.memory @ attention


def classify(branch, f_mem):
    if f_mem.shape != (branch.classifier.shape[1],):
        raise DimensionError(f"feature shape {f_mem.shape} vs classifier {branch.classifier.shape}")
    return softmax(branch.classifier @ f_mem)


def forward(params, f_obj):
    f_obj = np.asarray(f_obj, dtype=np.float64)
    traces = []
    for branch in params.branches:
        f = embed(branch, f_obj)
        attention, f_mem = memory_attend(branch, f)
        probs = classify(branch, f_mem)
        traces.append(BranchTrace(f=f, attention=attention, f_mem=f_mem, probs=probs))
    return ForwardTrace(f_obj=f_obj, branches=traces)


def forward_batch(params, features):
    """Batched forward: features is B x d1. Returns per-branch dicts of the
    same intermediates as forward(), each with a leading batch axis."""
    out = []
    for branch in params.branches:
        f = np.maximum(features @ branch.embed_weight.T + branch.embed_bias, 0.0)
        if branch.memory.shape[1] == 0:
            attention = np.zeros((features.shape[0], 0))
            f_mem = f
        else:
            scores = f @ branch.memory
            scores -= scores.max(axis=1, keepdims=True)
            attention = np.exp(scores)
            attention /= attention.sum(axis=1, keepdims=True)
            f_mem = attention @ branch.memory.T
        logits = f_mem @ branch.classifier.T
        logits -= logits.max(axis=1, keepdims=True)
        probs = np.exp(logits)
        probs /= probs.sum(axis=1, keepdims=True)
        out.append({"f": f, "attention": attention, "f_mem": f_mem, "probs": probs})
    return out


def zero_grads(params):
    return [BranchParams(np.zeros_like(b.embed_weight), np.zeros_like(b.embed_bias),
                         np.zeros_like(b.memory), np.zeros_like(b.classifier))
            for b in params.branches]


def save_checkpoint(params, path):
    """Versioned little-endian binary: header then raw f64 blocks per branch
    in declared order."""
    d = params.dims
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<6i", CHECKPOINT_VERSION, d.d1, d.d2, d.K, d.C, d.N))
        for branch in params.branches:
            for _, block in branch.blocks():
                fh.write(np.ascontiguousarray(block, dtype="<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, d1, d2, K, C, N = struct.unpack_from("<6i", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    dims = Dims(d1=d1, d2=d2, K=K, C=C, N=N)
    shapes = [(d2, d1), (d2,), (d2, K), (C, d2)]
    expected = 28 + N * sum(int(np.prod(s)) for s in shapes) * 8
    if len(raw) != expected:
        raise CheckpointError(f"checkpoint size {len(raw)} does not match header (want {expected})")
    offset = 28
    branches = []
    for _ in range(N):
        blocks = []
        for shape in shapes:
            count = int(np.prod(shape))
            block = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(shape).copy()
            offset += count * 8
            blocks.append(block)
        branches.append(BranchParams(*blocks))
    return ModelParams(branches=branches, dims=dims)
