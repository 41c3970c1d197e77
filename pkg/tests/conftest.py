from fractions import Fraction

import numpy as np
import pytest
import torch

from scoregnn.ingest import NoteEvent, default_schema
from scoregnn.synthetic import generate

torch.set_num_threads(1)


def note(onset, duration, step="C", alter=0, octave=4, note_id=0, piece="p", **kw):
    onset, duration = Fraction(onset), Fraction(duration)
    kw.setdefault("measure_number", int(onset // 4))
    kw.setdefault("beat_in_measure", onset % 4)
    return NoteEvent(piece, note_id, onset, duration, step, alter, octave, **kw)


def random_piece(rng, n, piece="r", grid=4, span=16, max_dur=8, naturals=False):
    """Random notes on a 1/grid quarter grid; pitches in octaves 3-5."""
    notes = []
    for i in range(n):
        onset = Fraction(int(rng.integers(0, span * grid)), grid)
        dur = Fraction(int(rng.integers(1, max_dur + 1)), grid)
        step = "CDEFGAB"[int(rng.integers(7))]
        alter = 0 if naturals else int(rng.integers(-1, 2))
        notes.append(note(onset, dur, step, alter, int(rng.integers(3, 6)), note_id=i, piece=piece,
                          voice=int(rng.integers(3))))
    return notes


@pytest.fixture(scope="session")
def schema():
    return default_schema()


@pytest.fixture(scope="session")
def toy():
    return generate(0, 4, 60)


def tiny_config(logit_fusion=True):
    from scoregnn.encoder import EncoderConfig
    from scoregnn.model import ModelConfig
    return ModelConfig(EncoderConfig(layers=2, hidden=8, out=8, dropout=0.1), head_hidden=8, fusion_dim=8,
                       fusion_heads=2, logit_fusion=logit_fusion)


def tiny_model(schema, seed=0, logit_fusion=True):
    from scoregnn.model import AnalysisModel
    torch.manual_seed(seed)
    return AnalysisModel(schema, tiny_config(logit_fusion)).eval()


# ----------------------------------------------------------------------------
# Acceptance reporting: one PASS/FAIL line per criterion in the summary.

_ACCEPTANCE = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        detail = getattr(item, "criterion_detail", "")
        status = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
        _ACCEPTANCE[number] = f"criterion {number:>2} {status}  {title}" + (f"  [{detail}]" if detail else "")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        terminalreporter.write_line(_ACCEPTANCE[number])
