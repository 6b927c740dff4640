"""Clustering metrics: NMI, accuracy under optimal matching, ARI.

All three compare a predicted labeling against ground truth through the
contingency table, and all are invariant to relabeling either side.
NMI normalizes mutual information by the arithmetic mean of the two
label entropies (natural logs). Accuracy maximizes the matched fraction
over one-to-one cluster-to-class assignments, solved exactly on the
(zero-padded square) contingency table. ARI keeps its pair-counting
combinatorics in exact integers until the final division.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ContractError

__all__ = [
    "ContingencyTable",
    "nmi",
    "clustering_accuracy",
    "ari",
    "hungarian",
]


def _as_labels(name, values):
    arr = np.asarray(values)
    if arr.ndim != 1:
        raise ContractError(f"{name}: labels must be one-dimensional, got shape {arr.shape}")
    return arr


def _paired_labels(pred, truth, min_n=1):
    pred = _as_labels("pred", pred)
    truth = _as_labels("truth", truth)
    if pred.shape[0] != truth.shape[0]:
        raise ContractError(
            f"label length mismatch: pred has {pred.shape[0]}, truth has {truth.shape[0]}"
        )
    if pred.shape[0] < min_n:
        raise ContractError(f"need at least {min_n} samples, got {pred.shape[0]}")
    return pred, truth


@dataclass(frozen=True)
class ContingencyTable:
    counts: np.ndarray  # K_pred x K_true, nonnegative ints

    @classmethod
    def from_labels(cls, pred, truth) -> "ContingencyTable":
        pred, truth = _paired_labels(pred, truth)
        _, pred_idx = np.unique(pred, return_inverse=True)
        _, truth_idx = np.unique(truth, return_inverse=True)
        counts = np.zeros((pred_idx.max() + 1, truth_idx.max() + 1), dtype=np.int64)
        np.add.at(counts, (pred_idx, truth_idx), 1)
        return cls(counts)

    @property
    def row_marginals(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def col_marginals(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def _log_p(marginals, n):
    return {
        int(i): math.log(int(v) / n) for i, v in enumerate(marginals) if v > 0
    }


def nmi(pred, truth) -> float:
    """Mutual information over the arithmetic mean of the two entropies,
    in [0, 1]. Two single-cluster partitions are identical, hence 1.

    Every term reuses the same log(marginal/n) evaluations and all sums
    go through fsum, so relabeling either side cannot move the result
    and identical partitions score exactly 1.
    """
    table = ContingencyTable.from_labels(pred, truth)
    n = table.total
    log_rows = _log_p(table.row_marginals, n)
    log_cols = _log_p(table.col_marginals, n)
    h_pred = -math.fsum(
        (int(v) / n) * log_rows[i] for i, v in enumerate(table.row_marginals) if v > 0
    )
    h_truth = -math.fsum(
        (int(v) / n) * log_cols[j] for j, v in enumerate(table.col_marginals) if v > 0
    )
    if h_pred == 0.0 and h_truth == 0.0:
        return 1.0
    if h_pred == 0.0 or h_truth == 0.0:
        return 0.0
    info = math.fsum(
        (int(table.counts[i, j]) / n)
        * (math.log(int(table.counts[i, j]) / n) - log_rows[int(i)] - log_cols[int(j)])
        for i, j in zip(*np.nonzero(table.counts))
    )
    value = info / ((h_pred + h_truth) / 2.0)
    return min(max(value, 0.0), 1.0)


def clustering_accuracy(pred, truth) -> float:
    """Fraction matched under the best one-to-one cluster-to-class map.

    The contingency table is zero-padded to square when the cluster
    counts differ, then the match count is maximized by optimal
    assignment.
    """
    table = ContingencyTable.from_labels(pred, truth)
    counts = table.counts
    size = max(counts.shape)
    padded = np.zeros((size, size), dtype=np.int64)
    padded[: counts.shape[0], : counts.shape[1]] = counts
    assignment = hungarian(-padded.astype(np.float64))
    matched = padded[np.arange(size), assignment].sum()
    return float(matched / table.total)


def ari(pred, truth) -> float:
    """Pair-counting index adjusted for chance, at most 1; 0 in
    expectation for independent partitions. Integer-exact until the
    final ratio."""
    pred, truth = _paired_labels(pred, truth, min_n=2)
    table = ContingencyTable.from_labels(pred, truth)
    sum_cells = sum(math.comb(int(v), 2) for v in table.counts.ravel())
    sum_rows = sum(math.comb(int(v), 2) for v in table.row_marginals)
    sum_cols = sum(math.comb(int(v), 2) for v in table.col_marginals)
    total_pairs = math.comb(table.total, 2)
    numerator = 2 * (sum_cells * total_pairs - sum_rows * sum_cols)
    denominator = total_pairs * (sum_rows + sum_cols) - 2 * sum_rows * sum_cols
    if denominator == 0:
        # Both partitions degenerate in the same way (all-singletons or
        # single-cluster on both sides): identical, by convention 1.
        return 1.0
    return numerator / denominator


def hungarian(cost) -> np.ndarray:
    """Minimal-cost one-to-one assignment on a square cost matrix;
    returns the column assigned to each row."""
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ContractError(f"hungarian: cost matrix must be square, got {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise ContractError("hungarian: cost matrix must be finite")
    rows, cols = linear_sum_assignment(cost)
    assignment = np.empty(cost.shape[0], dtype=np.int64)
    assignment[rows] = cols
    return assignment
