"""Injective panoptic-quality scoring against sparse ground truth.

Predictions are matched one-to-one to annotated GT instances by maximizing
total IoU; at most one predicted fragment can match each GT instance, which
penalizes splits. With the recall component disabled (sparse-annotation
mode), predictions that overlap no annotated instance are ignored entirely.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import betainc

from .errors import DegenerateError, EmptyGtError, ShapeMismatchError

# Totals within this tolerance are treated as equal when breaking ties
# between assignments; real ties differ only by summation order (ulps),
# while genuinely different totals are far larger.
_TIE_EPS = 1e-12


def contingency(pred: np.ndarray, gt: np.ndarray):
    """Joint voxel-count histogram of (pred_id, gt_id), background included.

    Returns (pair_counts dict, pred_totals dict, gt_totals dict).
    """
    if pred.shape != gt.shape:
        raise ShapeMismatchError(f"{pred.shape} vs {gt.shape}")
    p = pred.ravel().astype(np.int64)
    g = gt.ravel().astype(np.int64)
    base = int(g.max()) + 1
    key = p * base + g
    uniq, counts = np.unique(key, return_counts=True)
    pairs = {}
    pred_totals = {}
    gt_totals = {}
    for k, c in zip(uniq.tolist(), counts.tolist()):
        pid, gid = divmod(k, base)
        pairs[(pid, gid)] = c
        pred_totals[pid] = pred_totals.get(pid, 0) + c
        gt_totals[gid] = gt_totals.get(gid, 0) + c
    return pairs, pred_totals, gt_totals


def iou_table(pred: np.ndarray, gt: np.ndarray):
    """IoU matrix between nonzero GT instances (rows) and predictions (cols).

    Returns (gt_ids, pred_ids, iou matrix, intersections, unions).
    """
    pairs, pred_totals, gt_totals = contingency(pred, gt)
    gt_ids = sorted(g for g in gt_totals if g != 0)
    pred_ids = sorted(p for p in pred_totals if p != 0)
    iou = np.zeros((len(gt_ids), len(pred_ids)))
    inter = np.zeros_like(iou, dtype=np.int64)
    union = np.zeros_like(iou, dtype=np.int64)
    for i, gid in enumerate(gt_ids):
        for j, pid in enumerate(pred_ids):
            n = pairs.get((pid, gid), 0)
            u = gt_totals[gid] + pred_totals[pid] - n
            inter[i, j] = n
            union[i, j] = u
            if n:
                iou[i, j] = n / u
    return gt_ids, pred_ids, iou, inter, union


@dataclass
class MatchTable:
    pairs: list = field(default_factory=list)   # (gt_id, pred_id, inter, union, iou)
    unmatched_gt: list = field(default_factory=list)
    unmatched_pred: list = field(default_factory=list)


def _best_total(matrix: np.ndarray) -> float:
    if matrix.size == 0:
        return 0.0
    rows, cols = linear_sum_assignment(matrix, maximize=True)
    return float(matrix[rows, cols].sum())


def _lex_optimal_assignment(iou: np.ndarray):
    """Maximum-total assignment, lexicographically smallest among ties.

    Pairs are fixed in ascending (row, col) order whenever doing so still
    admits an optimal completion, so equal-total assignments resolve toward
    smaller (gt, pred) index pairs.
    """
    n_gt, n_pred = iou.shape
    rows_left = list(range(n_gt))
    cols_left = list(range(n_pred))
    target = _best_total(iou)
    pairs = []
    for r in range(n_gt):
        if not cols_left:
            break
        rows_left = [x for x in rows_left if x != r]
        chosen = None
        for c in cols_left:
            rest = [x for x in cols_left if x != c]
            completion = _best_total(iou[np.ix_(rows_left, rest)])
            if iou[r, c] + completion >= target - _TIE_EPS:
                chosen = c
                target = completion
                break
        if chosen is not None:
            pairs.append((r, chosen))
            cols_left.remove(chosen)
        else:
            # leaving this row unmatched is required for optimality
            target = _best_total(iou[np.ix_(rows_left, cols_left)])
    return pairs


def injective_match(iou: np.ndarray, gt_ids=None, pred_ids=None,
                    inter=None, union=None, iou_floor: float = 0.0) -> MatchTable:
    """One-to-one assignment maximizing total IoU.

    Zero-IoU pairs (and pairs at or below iou_floor) are never matched.
    Ties between equal-total assignments resolve toward lexicographically
    smaller (gt, pred) index pairs.
    """
    iou = np.asarray(iou, dtype=np.float64)
    if iou.size and iou.min() < 0:
        raise ValueError("IoU matrix must be nonnegative")
    n_gt, n_pred = iou.shape
    gt_ids = list(gt_ids) if gt_ids is not None else list(range(n_gt))
    pred_ids = list(pred_ids) if pred_ids is not None else list(range(n_pred))

    table = MatchTable()
    matched_rows, matched_cols = set(), set()
    if iou.size:
        for i, j in _lex_optimal_assignment(iou):
            score = float(iou[i, j])
            if score <= iou_floor or score == 0.0:
                continue
            n = int(inter[i, j]) if inter is not None else 0
            u = int(union[i, j]) if union is not None else 0
            table.pairs.append((gt_ids[i], pred_ids[j], n, u, score))
            matched_rows.add(i)
            matched_cols.add(j)
    table.unmatched_gt = [gt_ids[i] for i in range(n_gt) if i not in matched_rows]
    table.unmatched_pred = [pred_ids[j] for j in range(n_pred)
                            if j not in matched_cols]
    return table


@dataclass
class IpqReport:
    per_instance: list          # (gt_id, score)
    mean: float
    sem: float
    n: int
    recall_enabled: bool
    match_table: MatchTable

    def to_dict(self) -> dict:
        return {
            "per_instance": [{"gt_id": g, "score": s} for g, s in self.per_instance],
            "mean": self.mean,
            "sem": self.sem,
            "n": self.n,
            "recall_enabled": self.recall_enabled,
            "matches": [
                {"gt_id": g, "pred_id": p, "intersection": i,
                 "union": u, "iou": s}
                for g, p, i, u, s in self.match_table.pairs
            ],
            "unmatched_gt": self.match_table.unmatched_gt,
            "unmatched_pred": self.match_table.unmatched_pred,
        }


def _mean_sem(scores):
    arr = np.asarray(scores, dtype=np.float64)
    mean = float(arr.mean())
    sem = float(arr.std(ddof=1) / np.sqrt(arr.size)) if arr.size > 1 else 0.0
    return mean, sem


def ipq_sparse(pred: np.ndarray, gt_sparse: np.ndarray,
               recall_enabled: bool = False, iou_floor: float = 0.0) -> IpqReport:
    """Score predictions against sparsely annotated GT.

    Recall disabled (default): each annotated GT instance scores its matched
    IoU (0 if unmatched); predictions overlapping no annotated instance are
    ignored. Recall enabled: unmatched predictions additionally enter the
    denominator as zero-score entries (documented extension).
    """
    gt_ids_all = np.unique(gt_sparse)
    gt_ids_all = gt_ids_all[gt_ids_all != 0]
    if gt_ids_all.size == 0:
        raise EmptyGtError("ground truth contains no annotated instances")

    gt_ids, pred_ids, iou, inter, union = iou_table(pred, gt_sparse)
    # predictions with zero overlap against every annotated instance
    touching = [j for j in range(len(pred_ids)) if iou[:, j].max(initial=0) > 0]
    iou_t = iou[:, touching]
    inter_t = inter[:, touching]
    union_t = union[:, touching]
    pred_ids_t = [pred_ids[j] for j in touching]
    ignored_preds = [pred_ids[j] for j in range(len(pred_ids))
                     if j not in touching]

    table = injective_match(iou_t, gt_ids, pred_ids_t, inter_t, union_t,
                            iou_floor=iou_floor)
    matched = {g: s for g, _, _, _, s in table.pairs}
    per_instance = [(int(g), float(matched.get(g, 0.0))) for g in gt_ids]

    scores = [s for _, s in per_instance]
    if recall_enabled:
        # zero-overlap predictions are unmatched too in this mode
        table.unmatched_pred = sorted(table.unmatched_pred + ignored_preds)
        scores = scores + [0.0] * len(table.unmatched_pred)
    else:
        # out-of-annotation predictions are not "unmatched", they are ignored
        table.unmatched_pred = [p for p in table.unmatched_pred
                                if p not in ignored_preds]
    mean, sem = _mean_sem(scores)
    return IpqReport(per_instance=per_instance, mean=mean, sem=sem,
                     n=len(scores), recall_enabled=recall_enabled,
                     match_table=table)


def paired_t_test(scores_a, scores_b):
    """Two-sided paired t-test. Returns (t, p, df, degenerate flag)."""
    a = np.asarray(scores_a, dtype=np.float64)
    b = np.asarray(scores_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeMismatchError("paired score lists must have equal length")
    n = a.size
    if n < 2:
        raise DegenerateError("need at least 2 paired scores")
    d = a - b
    sd = d.std(ddof=1)
    md = d.mean()
    df = n - 1
    if sd == 0.0:
        # all differences identical: t undefined
        return (np.inf if md != 0 else 0.0,
                0.0 if md != 0 else 1.0, df, True)
    t = md / (sd / np.sqrt(n))
    # two-sided p via the regularized incomplete beta of the t distribution
    p = float(betainc(df / 2.0, 0.5, df / (df + t * t)))
    return float(t), p, df, False
