from fractions import Fraction

import numpy as np
import pytest

from scoregnn.graph import build_graph
from scoregnn.heads import predict_classes
from scoregnn.inference import (
    PredictionTable, SchemaMismatch, analyze, evaluate, export, gated_predictions, predict_logits, read_predictions,
)
from scoregnn.ingest import TaskSchema, TaskSpec
from scoregnn.model import checkpoint_from_model

from .conftest import note, tiny_model

GATE_SCHEMA = TaskSchema((
    TaskSpec("harm", ("a", "b", "c"), "segment"),
    TaskSpec("nct", ("chord_tone", "non_chord_tone"), "note", is_nct=True),
    TaskSpec("role", ("no", "yes"), "note"),
))


def gate_logits(nct_rows, harm_rows, role_rows=None):
    n = len(nct_rows)
    return {"harm": np.array(harm_rows, float), "nct": np.array(nct_rows, float),
            "role": np.array(role_rows if role_rows else [[0.0, 1.0]] * n, float)}


def test_gate_definition():
    # one onset {X chord tone, Y non-chord tone}
    logits = gate_logits([[1, 0], [0, 1]], [[0, 0, 1], [0, 5, 0]])
    plain = gated_predictions(logits, GATE_SCHEMA, [0, 0], "note")
    gated = gated_predictions(logits, GATE_SCHEMA, [0, 0], "note", gate_nct=True)
    assert plain["harm"].tolist() == [2, 1]
    assert gated["harm"].tolist() == [2, 2]
    assert gated["nct"].tolist() == plain["nct"].tolist() == [0, 1]
    assert gated["role"].tolist() == plain["role"].tolist()


def test_gate_fallback_when_all_nct():
    logits = gate_logits([[0, 1], [0, 1]], [[0, 0, 1], [0, 3, 0]])
    gated = gated_predictions(logits, GATE_SCHEMA, [0, 0], "note", gate_nct=True)
    ungated = predict_classes(logits["harm"], "onset", [0, 0])
    assert gated["harm"].tolist() == ungated.tolist() == [1, 1]


def test_gate_onset_level():
    logits = gate_logits([[1, 0], [0, 1], [1, 0]], [[0, 0, 1], [0, 9, 0], [1, 0, 0]])
    gated = gated_predictions(logits, GATE_SCHEMA, [0, 0, 1], "onset", gate_nct=True)
    assert gated["harm"].tolist() == [2, 2, 0]


def test_gate_requires_nct_task():
    schema = TaskSchema((TaskSpec("harm", ("a", "b")),))
    with pytest.raises(SchemaMismatch):
        gated_predictions({"harm": np.zeros((1, 2))}, schema, [0], gate_nct=True)


def test_analyze_matches_predict_classes(toy, schema):
    model = tiny_model(schema)
    notes = toy.notes_by_piece()
    table = analyze(toy.notes, model)
    assert len(table) == len(toy.notes)
    for piece in toy.pieces:
        logits = predict_logits(model, build_graph(notes[piece]))
        rows = table.rows_for(piece)
        for name in schema.names:
            np.testing.assert_array_equal(table.predictions[name][rows], predict_classes(logits[name]))


def test_gating_never_changes_nct_column(toy, schema):
    model = tiny_model(schema)
    a = analyze(toy.notes, model, level="onset")
    b = analyze(toy.notes, model, level="onset", gate_nct=True)
    np.testing.assert_array_equal(a.predictions["nct"], b.predictions["nct"])
    c = analyze(toy.notes, model, level="onset", gate_nct=True)
    for name in schema.names:
        np.testing.assert_array_equal(b.predictions[name], c.predictions[name])


def test_analyze_from_checkpoint_path(tmp_path, toy, schema):
    model = tiny_model(schema)
    checkpoint_from_model(model).save(tmp_path / "m.ckpt")
    a = analyze(toy.notes, tmp_path / "m.ckpt", pieces=["toy001"])
    b = analyze(toy.notes, model, pieces=["toy001"])
    assert set(a.piece_id) == {"toy001"}
    for name in schema.names:
        np.testing.assert_array_equal(a.predictions[name], b.predictions[name])


def test_analyze_errors(toy, schema):
    model = tiny_model(schema)
    with pytest.raises(KeyError):
        analyze(toy.notes, model, pieces=["nope"])
    with pytest.raises(SchemaMismatch):
        analyze(toy.notes, model, schema=schema.without_aux())


def test_export_round_trip(tmp_path, toy, schema):
    table = analyze(toy.notes, tiny_model(schema), level="onset", gate_nct=True)
    export(table, tmp_path / "p.tsv")
    back = read_predictions(tmp_path / "p.tsv", schema)
    assert back.piece_id == table.piece_id and back.note_id == table.note_id and back.onset == table.onset
    for name in schema.names:
        np.testing.assert_array_equal(back.predictions[name], table.predictions[name])


def test_export_empty_and_three_notes(tmp_path, schema):
    empty = PredictionTable(schema, predictions={n: np.zeros(0, int) for n in schema.names})
    export(empty, tmp_path / "e.tsv")
    lines = (tmp_path / "e.tsv").read_text().splitlines()
    assert lines == ["\t".join(["piece_id", "note_id", "onset"] + schema.names)]
    notes = [note(0, 1, "C", note_id=0), note(0, 1, "E", note_id=1), note(Fraction(1, 2), 1, "G", note_id=2)]
    export(analyze(notes, tiny_model(schema)), tmp_path / "t.tsv")
    rows = (tmp_path / "t.tsv").read_text().splitlines()
    assert len(rows) == 4
    assert all(len(r.split("\t")) == 23 for r in rows)
    assert rows[3].split("\t")[2] == "1/2"


def test_export_unwritable(tmp_path, schema):
    empty = PredictionTable(schema, predictions={n: np.zeros(0, int) for n in schema.names})
    with pytest.raises(OSError):
        export(empty, tmp_path / "missing" / "dir" / "p.tsv")


def test_read_predictions_schema_mismatch(tmp_path, schema):
    empty = PredictionTable(schema, predictions={n: np.zeros(0, int) for n in schema.names})
    export(empty, tmp_path / "e.tsv")
    with pytest.raises(SchemaMismatch):
        read_predictions(tmp_path / "e.tsv", schema.without_aux())


def test_evaluate(toy, schema):
    model = tiny_model(schema)
    notes = toy.notes_by_piece()
    scores = evaluate(model, notes, toy.frames)
    assert set(scores) == set(schema.names) | {"csr"}
    for v in scores.values():
        assert v is None or 0.0 <= v <= 1.0
    empty = evaluate(model, {}, {})
    assert all(v is None for v in empty.values())
