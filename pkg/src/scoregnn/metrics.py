"""Evaluation metrics: macro-F1, accuracy and chord-symbol recall (CSR).

Scores computed over an empty selection are reported as ``None`` ("absent")
rather than 0.
"""

from __future__ import annotations

import numpy as np

CSR_COMPONENTS = ("local_key", "degree", "quality", "inversion")


def confusion(pred, gold, n_classes: int, mask=None) -> np.ndarray:
    pred, gold = np.asarray(pred), np.asarray(gold)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        pred, gold = pred[mask], gold[mask]
    return np.bincount(gold * n_classes + pred, minlength=n_classes * n_classes).reshape(n_classes, n_classes)


def macro_f1(pred, gold, mask, n_classes: int, exclude=()) -> float | None:
    """Unweighted mean F1 over all classes (rows = gold, columns = pred).

    A class absent from both predictions and gold scores 0 and still counts.
    ``exclude`` drops class indices from the average (e.g. a ``none`` class).
    """
    cm = confusion(pred, gold, n_classes, mask)
    if cm.sum() == 0:
        return None
    tp = np.diag(cm).astype(float)
    denom = cm.sum(axis=0) + cm.sum(axis=1)
    f1 = np.divide(2 * tp, denom, out=np.zeros(n_classes), where=denom > 0)
    keep = [c for c in range(n_classes) if c not in set(exclude)]
    return float(f1[keep].mean())


def accuracy(pred, gold, mask) -> float | None:
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return None
    return float((np.asarray(pred)[mask] == np.asarray(gold)[mask]).mean())


def _segments(onsets, offsets, masks):
    """Annotated onset segments: (representative note, start, end).

    A segment starts at each onset where some note carries any component
    label and runs to the next such onset; the last runs to the piece end.
    The representative is the first note at that onset with all components
    labelled, or None.
    """
    onsets = np.asarray(onsets, dtype=float)
    end = float(np.max(offsets))
    any_mask = np.zeros(len(onsets), dtype=bool)
    all_mask = np.ones(len(onsets), dtype=bool)
    for m in masks:
        any_mask |= m
        all_mask &= m
    starts = np.unique(onsets[any_mask])
    out = []
    for k, u in enumerate(starts):
        stop = starts[k + 1] if k + 1 < len(starts) else end
        members = np.nonzero((onsets == u) & all_mask)[0]
        out.append((int(members[0]) if len(members) else None, float(u), float(stop)))
    return out


def csr(pred_tasks: dict, gold_tasks: dict, onsets, offsets, mask: dict,
        components=CSR_COMPONENTS) -> float | None:
    """Duration-weighted share of annotated time whose label is jointly right.

    ``pred_tasks``/``gold_tasks``/``mask`` map task name to per-note arrays;
    predictions should already be onset-level (constant within an onset).
    """
    missing = [c for c in components if c not in pred_tasks or c not in gold_tasks or c not in mask]
    if missing:
        raise KeyError(f"missing CSR component tasks: {', '.join(missing)}")
    masks = [np.asarray(mask[c], dtype=bool) for c in components]
    hit = total = 0.0
    for rep, start, stop in _segments(onsets, offsets, masks):
        if rep is None:
            continue
        total += stop - start
        if all(pred_tasks[c][rep] == gold_tasks[c][rep] for c in components):
            hit += stop - start
    return hit / total if total > 0 else None


def segment_accuracy(pred, gold, onsets, offsets, mask: dict, task: str,
                     components=CSR_COMPONENTS) -> float | None:
    """Duration-weighted accuracy of one component over the CSR segments."""
    masks = [np.asarray(mask[c], dtype=bool) for c in components]
    hit = total = 0.0
    for rep, start, stop in _segments(onsets, offsets, masks):
        if rep is None:
            continue
        total += stop - start
        if pred[task][rep] == gold[task][rep]:
            hit += stop - start
    return hit / total if total > 0 else None


def task_score(task, pred, gold, mask) -> float | None:
    """The task's own metric; CSR components are scored by note accuracy here."""
    if task.metric == "macro_f1":
        return macro_f1(pred, gold, mask, task.n_classes)
    return accuracy(pred, gold, mask)


def mean_score(scores) -> float | None:
    vals = [v for v in scores if v is not None]
    return float(np.mean(vals)) if vals else None
