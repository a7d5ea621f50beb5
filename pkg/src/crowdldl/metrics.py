"""Label-distribution evaluation: Chebyshev, Clark, Canberra, KL divergence,
cosine, intersection, and top-1 accuracy on the dominant category.

Clark is divided by sqrt(C) and Canberra by C so every distance lives in
[0, 1]; the raw variants are available via normalized=False. 0/0 terms in
Clark/Canberra count as 0; the KL metric floors both arguments at 1e-10.
"""

import json
import math
from dataclasses import dataclass, asdict

import numpy as np

from . import model
from .linalg import DimensionError

EPS = 1e-10

CSV_COLUMNS = ["chebyshev", "clark", "canberra", "kl", "cosine", "intersection",
               "accuracy", "sample_count"]


def _check(d, d_hat):
    if d.shape != d_hat.shape:
        raise DimensionError(f"distribution shapes differ: {d.shape} vs {d_hat.shape}")


def chebyshev(d, d_hat):
    _check(d, d_hat)
    return float(np.max(np.abs(d - d_hat)))


def clark(d, d_hat, normalized=True):
    _check(d, d_hat)
    s = d + d_hat
    terms = np.zeros_like(d)
    nz = s > 0
    terms[nz] = ((d[nz] - d_hat[nz]) / s[nz]) ** 2
    raw = math.sqrt(float(np.sum(terms)))
    return raw / math.sqrt(len(d)) if normalized else raw


def canberra(d, d_hat, normalized=True):
    _check(d, d_hat)
    s = d + d_hat
    terms = np.zeros_like(d)
    nz = s > 0
    terms[nz] = np.abs(d[nz] - d_hat[nz]) / s[nz]
    raw = float(np.sum(terms))
    return raw / len(d) if normalized else raw


def kl_metric(d, d_hat):
    _check(d, d_hat)
    support = d > 0
    num = np.maximum(d[support], EPS)
    den = np.maximum(d_hat[support], EPS)
    return float(np.sum(d[support] * np.log(num / den)))


def cosine(d, d_hat):
    _check(d, d_hat)
    return float(np.dot(d, d_hat) / (np.linalg.norm(d) * np.linalg.norm(d_hat)))


def intersection(d, d_hat):
    _check(d, d_hat)
    return float(np.sum(np.minimum(d, d_hat)))


def top1_accuracy(d, d_hat):
    _check(d, d_hat)
    # np.argmax already breaks ties toward the lowest index
    return 1.0 if int(np.argmax(d)) == int(np.argmax(d_hat)) else 0.0


@dataclass
class MetricReport:
    chebyshev: float
    clark: float
    canberra: float
    kl: float
    cosine: float
    intersection: float
    accuracy: float
    sample_count: int

    def to_json(self):
        return json.dumps(asdict(self))

    def csv_row(self):
        vals = asdict(self)
        return ",".join(repr(vals[c]) if c != "sample_count" else str(vals[c])
                        for c in CSV_COLUMNS)

    @staticmethod
    def csv_header():
        return ",".join(CSV_COLUMNS)


def report_pair(d, d_hat):
    return np.array([chebyshev(d, d_hat), clark(d, d_hat), canberra(d, d_hat),
                     kl_metric(d, d_hat), cosine(d, d_hat), intersection(d, d_hat),
                     top1_accuracy(d, d_hat)])


def evaluate(samples, params):
    """Per-sample metrics averaged over the set; predictions are the branch
    average of the forward pass. Fixed summation order keeps runs bitwise
    reproducible."""
    if not samples:
        raise ValueError("empty evaluation set")
    totals = np.zeros(7)
    for s in samples:
        trace = model.forward(params, s.features)
        d_hat = np.mean([b.probs for b in trace.branches], axis=0)
        totals += report_pair(s.distribution, d_hat)
    means = totals / len(samples)
    return MetricReport(*[float(v) for v in means], sample_count=len(samples))
