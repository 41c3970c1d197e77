"""Running a trained model over pieces, NCT gating, export and evaluation."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
import torch

from . import metrics
from .encoder import collate
from .graph import ScoreGraph, build_graph
from .heads import predict_classes
from .ingest import LabelFrame, TaskSchema, group_by_piece
from .model import AnalysisModel, Checkpoint


class SchemaMismatch(ValueError):
    pass


@dataclass
class PredictionTable:
    """Predicted class indices per task, one row per note."""

    schema: TaskSchema
    piece_id: list = field(default_factory=list)
    note_id: list = field(default_factory=list)
    onset: list = field(default_factory=list)
    predictions: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.note_id)

    def rows_for(self, piece_id: str) -> np.ndarray:
        return np.array([i for i, p in enumerate(self.piece_id) if p == piece_id], dtype=np.int64)


@torch.no_grad()
def predict_logits(model: AnalysisModel, graph: ScoreGraph) -> dict:
    """Final (fused) logits per task for a whole piece, as numpy arrays."""
    model.eval()
    dtype = next(model.parameters()).dtype
    _, fused = model(collate([graph], dtype=dtype))
    return {name: fused[name].numpy() for name in model.schema.names}


def gated_predictions(logits: dict, schema: TaskSchema, onset_group, level: str = "note",
                      gate_nct: bool = False) -> dict:
    """Class indices per task.

    With ``gate_nct``, notes predicted non-chord-tone take, for every onset- or
    segment-level task, the onset aggregate over the chord-tone notes of their
    onset (the ungated onset aggregate if the onset has none).  At onset level
    every note of the onset takes the chord-tone aggregate.
    """
    out = {name: predict_classes(logits[name], level, onset_group) for name in schema.names}
    if not gate_nct:
        return out
    nct = schema.nct_task
    if nct is None:
        raise SchemaMismatch("NCT gating needs a task flagged as the non-chord-tone task")
    chord_tone = predict_classes(logits[nct.name], "note") == 0
    group = np.asarray(onset_group)
    for task in schema:
        if task.is_nct or task.level == "note":
            continue
        z = logits[task.name]
        ungated = predict_classes(z, "onset", group)
        result = out[task.name].copy()
        for g in np.unique(group):
            members = group == g
            ct = members & chord_tone
            pick = int(np.argmax(z[ct].mean(axis=0))) if ct.any() else int(ungated[members][0])
            if level == "onset":
                result[members] = pick
            else:
                result[members & ~chord_tone] = pick
        out[task.name] = result
    return out


def analyze(notes, checkpoint, level: str = "note", gate_nct: bool = False,
            schema: TaskSchema | None = None, pieces=None) -> PredictionTable:
    """Predict every task for every note of ``notes`` (possibly several pieces).

    ``checkpoint`` is a Checkpoint, a path to one, or an AnalysisModel.
    """
    if isinstance(checkpoint, AnalysisModel):
        model = checkpoint
    else:
        if not isinstance(checkpoint, Checkpoint):
            checkpoint = Checkpoint.load(checkpoint)
        model = checkpoint.build_model()
    if schema is not None and schema.names != model.schema.names:
        raise SchemaMismatch("requested tasks do not match the checkpoint schema")
    schema = model.schema
    by_piece = group_by_piece(notes)
    if pieces is not None:
        unknown = [p for p in pieces if p not in by_piece]
        if unknown:
            raise KeyError(f"unknown piece(s): {', '.join(unknown)}")
        by_piece = {p: by_piece[p] for p in pieces}
    table = PredictionTable(schema, predictions={n: [] for n in schema.names})
    for piece, piece_notes in by_piece.items():
        g = build_graph(piece_notes)
        preds = gated_predictions(predict_logits(model, g), schema, g.onset_group, level, gate_nct)
        table.piece_id += [piece] * len(piece_notes)
        table.note_id += [n.note_id for n in piece_notes]
        table.onset += [n.onset for n in piece_notes]
        for name in schema.names:
            table.predictions[name].append(preds[name])
    table.predictions = {n: (np.concatenate(v) if v else np.zeros(0, dtype=np.int64))
                         for n, v in table.predictions.items()}
    return table


def export(table: PredictionTable, path) -> None:
    """TSV: piece_id, note_id, onset, then one class-name column per task."""
    names = table.schema.names
    try:
        fh = Path(path).open("w", newline="", encoding="utf-8")
    except OSError as err:
        raise OSError(f"cannot write predictions to {path}: {err}") from err
    with fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(["piece_id", "note_id", "onset"] + names)
        for i in range(len(table)):
            writer.writerow([table.piece_id[i], table.note_id[i], table.onset[i]]
                            + [table.schema[n].classes[table.predictions[n][i]] for n in names])


def read_predictions(path, schema: TaskSchema) -> PredictionTable:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter="\t")
        header = next(reader)
        names = header[3:]
        if names != schema.names:
            raise SchemaMismatch("prediction columns do not match the schema")
        table = PredictionTable(schema, predictions={n: [] for n in names})
        for row in reader:
            table.piece_id.append(row[0])
            table.note_id.append(int(row[1]))
            table.onset.append(Fraction(row[2]))
            for n, value in zip(names, row[3:]):
                table.predictions[n].append(schema[n].index(value))
    table.predictions = {n: np.asarray(v, dtype=np.int64) for n, v in table.predictions.items()}
    return table


def evaluate(model: AnalysisModel, pieces: dict, frames: dict, level: str = "onset") -> dict:
    """Per-task scores plus ``csr`` over a set of pieces.

    ``pieces`` maps piece id to its note list (or a prebuilt ScoreGraph);
    ``frames`` maps piece id to its LabelFrame.  Tasks are pooled over notes;
    CSR is pooled over annotated time.  Harmony tasks (segment level) use
    onset-level predictions, others note-level.
    """
    schema = model.schema
    pred_all = {n: [] for n in schema.names}
    gold_all = {n: [] for n in schema.names}
    mask_all = {n: [] for n in schema.names}
    hit = total = 0.0
    have_csr = all(c in schema for c in metrics.CSR_COMPONENTS)
    for piece, item in pieces.items():
        g = item if isinstance(item, ScoreGraph) else build_graph(item)
        frame: LabelFrame = frames[piece]
        logits = predict_logits(model, g)
        preds = {}
        for task in schema:
            lvl = level if task.level != "note" else "note"
            preds[task.name] = predict_classes(logits[task.name], lvl, g.onset_group)
            pred_all[task.name].append(preds[task.name])
            gold_all[task.name].append(frame.labels[task.name])
            mask_all[task.name].append(frame.mask[task.name])
        if have_csr:
            masks = [frame.mask[c] for c in metrics.CSR_COMPONENTS]
            for rep, start, stop in metrics._segments(g.onset, g.offset, masks):
                if rep is None:
                    continue
                total += stop - start
                if all(preds[c][rep] == frame.labels[c][rep] for c in metrics.CSR_COMPONENTS):
                    hit += stop - start
    scores = {}
    for task in schema:
        if not pred_all[task.name]:
            scores[task.name] = None
            continue
        scores[task.name] = metrics.task_score(
            task, np.concatenate(pred_all[task.name]), np.concatenate(gold_all[task.name]),
            np.concatenate(mask_all[task.name]))
    if have_csr:
        scores["csr"] = hit / total if total > 0 else None
    return scores
