"""Distance conversion, sequence matching and place recognition metrics.

All matrices are (n_reference, n_query): rows are reference places and
columns are queries. Ties in argmin/argmax resolve to the lowest row.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .exceptions import DataError

BOUNDARY_MODES = ("truncate-rescale", "valid-only")


def _as_matrix(M, name="matrix") -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise DataError(f"{name} must be 2-D, got shape {M.shape}")
    if M.size == 0:
        raise DataError(f"{name} is empty")
    return M


def similarity_to_distance(S) -> np.ndarray:
    """``max(S) - S``: best match becomes distance 0."""
    S = _as_matrix(S, "similarity matrix")
    if not np.all(np.isfinite(S)):
        raise DataError("similarity matrix has non-finite entries")
    return S.max() - S


def ground_truth_matrix(n_reference: int, ground_truth, tolerance: int = 0) -> np.ndarray:
    """Binary (n_reference, n_query) grid from per-query true reference rows.

    Entries of ``ground_truth`` below 0 mean "no true match". A positive
    ``tolerance`` also accepts rows within that many places.
    """
    gt = np.asarray(ground_truth, dtype=np.int64)
    if tolerance < 0:
        raise ValueError("tolerance must be nonnegative")
    rows = np.arange(n_reference)[:, None]
    G = (np.abs(rows - gt[None, :]) <= tolerance) & (gt[None, :] >= 0)
    return G.astype(np.uint8)


def sequence_match(D, seq_len: int, boundary: str = "truncate-rescale") -> np.ndarray:
    """Sum distances along the forward diagonal of length ``seq_len``.

    ``D_seq[r, q] = sum_k D[r + k, q + k]`` for ``k < seq_len``. Near the
    bottom or right edge fewer terms ``a`` exist. With ``truncate-rescale``
    the partial sum is scaled by ``seq_len / a``. With ``valid-only`` those
    cells are set to ``inf``, so they never win.
    """
    D = _as_matrix(D, "distance matrix")
    if seq_len < 1:
        raise ValueError("sequence length must be at least 1")
    if boundary not in BOUNDARY_MODES:
        raise ValueError(f"boundary must be one of {BOUNDARY_MODES}")
    n_r, n_q = D.shape
    total = np.zeros_like(D)
    terms = np.zeros(D.shape, dtype=np.int64)
    for k in range(seq_len):
        if k >= n_r or k >= n_q:
            break
        total[:n_r - k, :n_q - k] += D[k:, k:]
        terms[:n_r - k, :n_q - k] += 1
    if boundary == "valid-only":
        return np.where(terms == seq_len, total, np.inf)
    return (total * seq_len) / terms


def predictions_from_distance(D) -> np.ndarray:
    """Nearest reference row for every query column."""
    return np.argmin(_as_matrix(D, "distance matrix"), axis=0)


def top_n(D, n: int) -> np.ndarray:
    """(n, n_query) indices of the ``n`` nearest rows per column, stable order."""
    D = _as_matrix(D, "distance matrix")
    return np.argsort(D, axis=0, kind="stable")[:n]


@dataclass
class RecallResult:
    value: float
    n: int
    hits: np.ndarray
    queries_without_truth: np.ndarray


def recall_details(D, GT, n: int) -> RecallResult:
    D = _as_matrix(D, "distance matrix")
    GT = np.asarray(GT)
    if GT.shape != D.shape:
        raise DataError(f"ground truth shape {GT.shape} does not match distances {D.shape}")
    if not 1 <= n <= D.shape[0]:
        raise ValueError(f"N must lie in [1, {D.shape[0]}]")
    best = top_n(D, n)
    hits = np.take_along_axis(GT.astype(bool), best, axis=0).any(axis=0)
    missing = np.flatnonzero(~GT.astype(bool).any(axis=0))
    return RecallResult(float(hits.mean()), n, hits, missing)


def recall_at_n(D, GT, n: int) -> float:
    """Fraction of queries with a true match among their ``n`` nearest references.

    Queries without any true match count as misses.
    """
    return recall_details(D, GT, n).value


@dataclass
class SparsityResult:
    """Mean gap between consecutive correctly matched queries.

    ``mean_gap`` and ``log_value`` are ``None`` when fewer than two queries
    are matched correctly.
    """

    mean_gap: float | None
    log_value: float | None
    correct_queries: np.ndarray

    @property
    def ok(self) -> bool:
        return self.mean_gap is not None

    @property
    def status(self) -> str:
        return "ok" if self.ok else "insufficient matches"


def correct_match_sparsity(D, GT) -> SparsityResult:
    D = _as_matrix(D, "distance matrix")
    GT = np.asarray(GT).astype(bool)
    if GT.shape != D.shape:
        raise DataError("ground truth shape does not match distances")
    pred = predictions_from_distance(D)
    correct = np.flatnonzero(GT[pred, np.arange(D.shape[1])])
    if len(correct) < 2:
        return SparsityResult(None, None, correct)
    gap = float(np.diff(correct).mean())
    return SparsityResult(gap, math.log(gap), correct)


def minmax_normalize(values: Mapping[str, float] | Iterable[float]):
    """Min-max scale to [0, 1] over the given population (all zero if constant).

    Pass the population explicitly, for example the log sparsity values of
    every method on one dataset.
    """
    if isinstance(values, Mapping):
        keys = list(values)
        scaled = minmax_normalize([values[k] for k in keys])
        return dict(zip(keys, scaled))
    arr = np.asarray(list(values), dtype=float)
    if arr.size == 0:
        return arr
    lo, hi = arr.min(), arr.max()
    return np.zeros_like(arr) if hi == lo else (arr - lo) / (hi - lo)


def evaluate_distance(D, GT, seq_lengths=(1, 2, 4, 10), recall_n=(1, 5, 10),
                      boundary: str = "truncate-rescale") -> dict:
    """Recall grid over sequence lengths plus SL1 sparsity, as plain data."""
    D = _as_matrix(D, "distance matrix")
    recall = {}
    for sl in seq_lengths:
        Ds = sequence_match(D, sl, boundary)
        recall[f"SL{sl}"] = {f"R@{n}": recall_at_n(Ds, GT, n) for n in recall_n if n <= D.shape[0]}
    sp = correct_match_sparsity(D, GT)
    return {
        "shape": list(D.shape),
        "boundary": boundary,
        "recall": recall,
        "sparsity": {"mean_gap": sp.mean_gap, "log": sp.log_value, "status": sp.status,
                     "n_correct": int(len(sp.correct_queries))},
        "queries_without_truth": recall_details(D, GT, 1).queries_without_truth.tolist(),
    }
