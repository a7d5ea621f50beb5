"""Synthetic crowd-voting data with planted per-annotator structure, plus the
line-delimited JSON dataset format used for both synthetic and real
precomputed-feature corpora.

Each stimulus is a latent vector z; features are a noisy linear image of z,
and each annotator votes by sampling softmax(P_n z / tau) from their own
preference matrix P_n. The ground-truth distribution is the normalized vote
count, exactly as a crowd-voted corpus would provide it.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .linalg import rng_stream, substream

FORMAT_VERSION = 1


class DatasetFormatError(ValueError):
    pass


@dataclass
class VoteSample:
    id: str
    features: np.ndarray          # length d1
    votes: list                   # N category indices, canonical sorted order
    distribution: np.ndarray      # length C, counts / N

    def __eq__(self, other):
        return (self.id == other.id
                and self.features.tobytes() == other.features.tobytes()
                and self.votes == other.votes
                and self.distribution.tobytes() == other.distribution.tobytes())


def vote_distribution(votes, num_categories):
    counts = np.bincount(np.asarray(votes, dtype=np.int64), minlength=num_categories)
    # counts/N is exact in binary64 for the small N used here; keep it explicit
    return counts.astype(np.float64) / float(len(votes))


def make_sample(sample_id, features, votes, num_categories):
    votes = sorted(int(v) for v in votes)
    for v in votes:
        if not 0 <= v < num_categories:
            raise DatasetFormatError(f"vote {v} out of range [0, {num_categories})")
    return VoteSample(
        id=sample_id,
        features=np.asarray(features, dtype=np.float64),
        votes=votes,
        distribution=vote_distribution(votes, num_categories),
    )


@dataclass
class GeneratorSpec:
    latent_dim: int = 8
    feature_dim: int = 16
    categories: int = 4
    annotators: int = 4
    preference_matrices: list = field(default_factory=list)  # N matrices, C x L
    feature_map: np.ndarray = None                           # d1 x L
    feature_noise: float = 0.1
    vote_temperature: float = 0.5
    samples: int = 2000
    seed: int = 0
    # annotators share a common preference core plus an individual deviation;
    # the deviation scale controls how much they disagree
    preference_spread: float = 0.45

    def validate(self):
        if min(self.latent_dim, self.feature_dim, self.categories, self.annotators) < 1:
            raise ValueError("all dimensions must be >= 1")
        if self.feature_noise < 0:
            raise ValueError("feature_noise must be >= 0")
        if self.vote_temperature <= 0:
            raise ValueError("vote_temperature must be > 0")
        if self.samples < 0:
            raise ValueError("samples must be >= 0")


def _fill_planted_structure(spec):
    """Draw P_n and the feature map deterministically from the datagen stream."""
    rng = rng_stream(spec.seed, "datagen")
    if spec.feature_map is None:
        spec.feature_map = rng.normal(0.0, 1.0, size=(spec.feature_dim, spec.latent_dim))
    if not spec.preference_matrices:
        shared = rng.normal(0.0, 1.0, size=(spec.categories, spec.latent_dim))
        spec.preference_matrices = [
            shared + spec.preference_spread * rng.normal(0.0, 1.0, size=shared.shape)
            for _ in range(spec.annotators)
        ]


def generate(spec):
    """Deterministic sample list: each sample's draws come from its own
    substream of (seed, index), so the output is independent of iteration
    order and fully reproducible."""
    spec.validate()
    _fill_planted_structure(spec)
    samples = []
    for i in range(spec.samples):
        rng = substream(spec.seed, "datagen", i)
        z = rng.normal(0.0, 1.0, size=spec.latent_dim)
        features = spec.feature_map @ z
        if spec.feature_noise > 0:
            features = features + rng.normal(0.0, spec.feature_noise, size=spec.feature_dim)
        votes = []
        for pref in spec.preference_matrices:
            logits = (pref @ z) / spec.vote_temperature
            shifted = logits - np.max(logits)
            probs = np.exp(shifted)
            probs /= probs.sum()
            votes.append(int(rng.choice(spec.categories, p=probs)))
        samples.append(make_sample(f"s{i:06d}", features, votes, spec.categories))
    return samples


def write_dataset(samples, path, categories, annotators, feature_dim):
    header = {"version": FORMAT_VERSION, "C": categories, "N": annotators, "d1": feature_dim}
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header) + "\n")
        for s in samples:
            if len(s.votes) != annotators:
                raise DatasetFormatError(
                    f"sample {s.id!r} has {len(s.votes)} votes, header declares {annotators}")
            rec = {"id": s.id, "features": list(s.features), "votes": s.votes}
            fh.write(json.dumps(rec) + "\n")


def read_dataset(path):
    """Returns (samples, header). Malformed lines report their line number."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DatasetFormatError("empty dataset file (missing header)")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise DatasetFormatError(f"line 1: malformed header: {e}") from e
    for key in ("version", "C", "N", "d1"):
        if key not in header:
            raise DatasetFormatError(f"line 1: header missing {key!r}")
    if header["version"] != FORMAT_VERSION:
        raise DatasetFormatError(f"unsupported dataset version {header['version']}")
    samples = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise DatasetFormatError(f"line {lineno}: malformed record: {e}") from e
        try:
            sid, feats, votes = rec["id"], rec["features"], rec["votes"]
        except KeyError as e:
            raise DatasetFormatError(f"line {lineno}: record missing {e}") from e
        if len(votes) != header["N"]:
            raise DatasetFormatError(
                f"line {lineno}: {len(votes)} votes, header declares N={header['N']}")
        if len(feats) != header["d1"]:
            raise DatasetFormatError(
                f"line {lineno}: {len(feats)} features, header declares d1={header['d1']}")
        try:
            samples.append(make_sample(sid, feats, votes, header["C"]))
        except DatasetFormatError as e:
            raise DatasetFormatError(f"line {lineno}: {e}") from e
    return samples, header


def split(samples, train_frac, seed):
    """Seeded disjoint partition into (train, test), both non-empty."""
    if not 0 < train_frac < 1:
        raise ValueError("train_frac must be in (0, 1)")
    if len(samples) < 2:
        raise ValueError("need at least 2 samples to split")
    order = rng_stream(seed, "shuffle").permutation(len(samples))
    n_train = int(round(train_frac * len(samples)))
    n_train = min(max(n_train, 1), len(samples) - 1)
    train = [samples[i] for i in order[:n_train]]
    test = [samples[i] for i in order[n_train:]]
    return train, test
