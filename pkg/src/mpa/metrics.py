"""Evaluation metrics: MSE, Pearson correlation, accuracy, rating buckets and WER."""

import math

import numpy as np

from . import kernels
from .errors import InvalidInput, UndefinedCorrelation

# Rating bucket edges. Intervals are half-open except the last, which is closed;
# the word-level [10, 10] bucket therefore holds exactly the perfect ratings.
PHONEME_BUCKETS = (0.0, 0.5, 1.0, 1.5, 2.0)
WORD_BUCKETS = (0.0, 2.0, 4.0, 7.0, 10.0, 10.0)


def _pair(x, y):
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise InvalidInput(f"length mismatch: {x.size} predictions vs {y.size} references")
    if x.size == 0:
        raise InvalidInput("need at least one pair")
    return x, y


def mse(pred, ref):
    x, y = _pair(pred, ref)
    d = x - y
    return float(np.dot(d, d) / x.size)


def pcc(pred, ref):
    """Pearson correlation with population moments."""
    x, y = _pair(pred, ref)
    if x.size < 2:
        raise UndefinedCorrelation("correlation needs at least two pairs")
    xc = x - x.mean()
    yc = y - y.mean()
    sx = math.sqrt(float(np.dot(xc, xc)))
    sy = math.sqrt(float(np.dot(yc, yc)))
    if sx == 0.0 or sy == 0.0:
        raise UndefinedCorrelation("correlation is undefined for a constant sequence")
    r = float(np.dot(xc, yc)) / (sx * sy)
    return max(-1.0, min(1.0, r))


def token_accuracy(predictions, references):
    p = list(predictions)
    r = list(references)
    if len(p) != len(r):
        raise InvalidInput(f"length mismatch: {len(p)} predictions vs {len(r)} references")
    if not r:
        raise InvalidInput("need at least one token")
    return sum(a == b for a, b in zip(p, r)) / len(r)


def bucket_index(label, edges):
    last = len(edges) - 2
    for k in range(last + 1):
        lo, hi = edges[k], edges[k + 1]
        if lo <= label < hi or (k == last and lo <= label <= hi):
            return k
    raise InvalidInput(f"rating {label} falls outside every bucket {tuple(edges)}")


def bucket_name(edges, k):
    lo, hi = edges[k], edges[k + 1]
    closing = "]" if k == len(edges) - 2 else ")"
    return f"[{lo:g},{hi:g}{closing}"


def accuracy_by_rating(predictions, references, ratings, edges=PHONEME_BUCKETS):
    """Token accuracy within each rating bucket; empty buckets map to None."""
    p, r, lab = list(predictions), list(references), list(ratings)
    if not (len(p) == len(r) == len(lab)):
        raise InvalidInput("predictions, references and ratings must align")
    hits = [0] * (len(edges) - 1)
    totals = [0] * (len(edges) - 1)
    for a, b, rating in zip(p, r, lab):
        k = bucket_index(rating, edges)
        totals[k] += 1
        hits[k] += a == b
    return {bucket_name(edges, k): (hits[k] / totals[k] if totals[k] else None)
            for k in range(len(totals))}


def edit_distance(hyp, ref, backend=None):
    """Levenshtein distance with unit costs; tokens may be any hashable values."""
    index = {}
    a = [index.setdefault(t, len(index)) for t in hyp]
    b = [index.setdefault(t, len(index)) for t in ref]
    return kernels.edit_distance(a, b, backend=backend)


def wer(hyp, ref, backend=None):
    ref = list(ref)
    if not ref:
        raise InvalidInput("reference must be non-empty")
    return edit_distance(list(hyp), ref, backend) / len(ref)


def corpus_wer(pairs, backend=None):
    """Total edits over total reference length for (hyp, ref) pairs."""
    edits = words = 0
    for hyp, ref in pairs:
        ref = list(ref)
        edits += edit_distance(list(hyp), ref, backend)
        words += len(ref)
    if words == 0:
        raise InvalidInput("references must be non-empty")
    return edits / words


def metric_record(metric, value, n, buckets=None):
    rec = {"metric": metric, "value": value, "n": n}
    if buckets is not None:
        rec["buckets"] = buckets
    return rec
