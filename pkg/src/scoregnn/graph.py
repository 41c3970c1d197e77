"""Heterogeneous score graphs: note, beat and measure nodes with typed edges.

Note-note relations (all between distinct notes):

* ``onset``: same onset (stored in both directions).
* ``consecutive``: offset of the source equals onset of the target.
* ``during``: target starts strictly inside the source's sounding span.
* ``rest``: the source is followed by a silence; it links to every note at the
  first onset after its offset, provided no note sustains across the gap.

Each note also links to the quarter-note beat containing its onset and to its
measure; beats and measures form temporal chains.  Every directed relation
has a reversed counterpart.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import pitch
from .ingest import MISSING, LabelFrame, NoteEvent, TaskSchema

FEATURE_VERSION = 1
GRAPH_FORMAT_VERSION = 1
N_PITCH_CLASS = 35
N_OCTAVE_BANDS = 5
N_FEATURES = N_PITCH_CLASS + N_OCTAVE_BANDS + 1 + 4
PITCH_BLOCK = slice(0, N_PITCH_CLASS + N_OCTAVE_BANDS)

NOTE_RELATIONS = ("onset", "consecutive", "during", "rest")
NODE_TYPES = ("note", "beat", "measure")
EDGE_TYPES = (
    ("note", "onset", "note"),
    ("note", "consecutive", "note"),
    ("note", "consecutive_rev", "note"),
    ("note", "during", "note"),
    ("note", "during_rev", "note"),
    ("note", "rest", "note"),
    ("note", "rest_rev", "note"),
    ("note", "in", "beat"),
    ("beat", "contains", "note"),
    ("beat", "next", "beat"),
    ("beat", "prev", "beat"),
    ("note", "in", "measure"),
    ("measure", "contains", "note"),
    ("measure", "next", "measure"),
    ("measure", "prev", "measure"),
)

# Candidate (diatonic steps, semitones) transpositions, identity included.
CANDIDATE_INTERVALS = (
    (-3, -5), (-2, -4), (-2, -3), (-1, -2), (-1, -1), (0, 0),
    (0, 1), (1, 1), (1, 2), (2, 3), (2, 4),
)


class TranspositionInapplicable(ValueError):
    """The interval would need a triple accidental or leave the octave range."""


@dataclass
class ScoreGraph:
    piece_id: str
    note_ids: np.ndarray
    note_features: np.ndarray
    beat_features: np.ndarray
    measure_features: np.ndarray
    edges: dict = field(default_factory=dict)
    note_order: np.ndarray = None
    onset: np.ndarray = None
    offset: np.ndarray = None
    onset_group: np.ndarray = None

    @property
    def n_notes(self) -> int:
        return len(self.note_ids)

    @property
    def n_beats(self) -> int:
        return len(self.beat_features)

    @property
    def n_measures(self) -> int:
        return len(self.measure_features)

    def num_nodes(self, ntype: str) -> int:
        return {"note": self.n_notes, "beat": self.n_beats, "measure": self.n_measures}[ntype]

    def features(self, ntype: str) -> np.ndarray:
        return {"note": self.note_features, "beat": self.beat_features,
                "measure": self.measure_features}[ntype]

    def edge_set(self, etype) -> set:
        e = self.edges[etype]
        return set(zip(e[0].tolist(), e[1].tolist()))


def _pairs(src, dst) -> np.ndarray:
    return np.array([np.asarray(src, dtype=np.int64), np.asarray(dst, dtype=np.int64)]).reshape(2, -1)


def _sorted_edges(e: np.ndarray) -> np.ndarray:
    if e.shape[1] == 0:
        return e
    order = np.lexsort((e[1], e[0]))
    return e[:, order]


def note_features(notes) -> np.ndarray:
    x = np.zeros((len(notes), N_FEATURES), dtype=np.float64)
    for i, n in enumerate(notes):
        x[i, pitch.spelled_index(n.pitch_step, n.pitch_alter)] = 1.0
        band = min(max(n.octave - 2, 0), N_OCTAVE_BANDS - 1)
        x[i, N_PITCH_CLASS + band] = 1.0
        x[i, N_PITCH_CLASS + N_OCTAVE_BANDS] = np.clip(math.log2(n.duration) / 3.0, -1.0, 1.0)
        base = N_PITCH_CLASS + N_OCTAVE_BANDS + 1
        x[i, base] = float(n.beat_in_measure == 0)
        x[i, base + 1] = float(n.beat_in_measure.denominator == 1)
        x[i, base + 2] = n.ts_numerator / 12.0
        x[i, base + 3] = n.ts_denominator / 32.0
    return x


def _ticks(notes):
    """Onsets and offsets as exact integers on a common grid."""
    denom = 1
    for n in notes:
        denom = math.lcm(denom, n.onset.denominator, n.duration.denominator)
    on = np.array([int(n.onset * denom) for n in notes], dtype=np.int64)
    off = np.array([int(n.offset * denom) for n in notes], dtype=np.int64)
    return on, off, denom


def note_note_edges(on: np.ndarray, off: np.ndarray, rest: bool = True) -> dict:
    """Forward note-note relations from integer onsets/offsets."""
    n = len(on)
    by_onset = np.argsort(on, kind="stable")
    sorted_on = on[by_onset]
    uniq, starts = np.unique(sorted_on, return_index=True)
    groups = np.split(by_onset, starts[1:]) if n else []
    group_of = {int(u): g for u, g in zip(uniq, groups)}

    src, dst = [], []
    for g in groups:
        if len(g) > 1:
            a, b = np.meshgrid(g, g, indexing="ij")
            keep = a != b
            src.append(a[keep])
            dst.append(b[keep])
    onset_e = _pairs(np.concatenate(src) if src else [], np.concatenate(dst) if dst else [])

    src, dst = [], []
    for i in range(n):
        g = group_of.get(int(off[i]))
        if g is not None:
            src.append(np.full(len(g), i))
            dst.append(g)
    cons_e = _pairs(np.concatenate(src) if src else [], np.concatenate(dst) if dst else [])

    lo = np.searchsorted(sorted_on, on, side="right")
    hi = np.searchsorted(sorted_on, off, side="left")
    src, dst = [], []
    for i in range(n):
        if hi[i] > lo[i]:
            js = by_onset[lo[i]:hi[i]]
            src.append(np.full(len(js), i))
            dst.append(js)
    during_e = _pairs(np.concatenate(src) if src else [], np.concatenate(dst) if dst else [])

    edges = {"onset": onset_e, "consecutive": cons_e, "during": during_e}
    if rest:
        # Running max of offsets over notes sorted by onset.
        prefix_max = np.maximum.accumulate(off[by_onset]) if n else off
        src, dst = [], []
        for i in range(n):
            nxt = np.searchsorted(uniq, off[i], side="right")
            if nxt == len(uniq):
                continue
            u = uniq[nxt]
            started = np.searchsorted(sorted_on, off[i], side="right")
            if prefix_max[started - 1] >= u:
                continue
            g = groups[nxt]
            src.append(np.full(len(g), i))
            dst.append(g)
        edges["rest"] = _pairs(np.concatenate(src) if src else [], np.concatenate(dst) if dst else [])
    else:
        edges["rest"] = _pairs([], [])
    return {k: _sorted_edges(v) for k, v in edges.items()}


def _chain(k: int) -> np.ndarray:
    return _pairs(np.arange(k - 1), np.arange(1, k)) if k > 1 else _pairs([], [])


def build_graph(notes, rest_edges: bool = True) -> ScoreGraph:
    """Build the score graph for one piece; node i is ``notes[i]``."""
    notes = list(notes)
    if not notes:
        raise ValueError("build_graph needs at least one note")
    piece = notes[0].piece_id
    if any(n.piece_id != piece for n in notes):
        raise ValueError("all notes must belong to one piece")
    n = len(notes)
    on, off, denom = _ticks(notes)
    x = note_features(notes)

    nn = note_note_edges(on, off, rest=rest_edges)
    edges = {("note", "onset", "note"): nn["onset"]}
    for rel in ("consecutive", "during", "rest"):
        edges[("note", rel, "note")] = nn[rel]
        edges[("note", rel + "_rev", "note")] = _sorted_edges(nn[rel][::-1].copy())

    # Quarter-note beats spanned by the piece.
    first_beat = min(math.floor(nt.onset) for nt in notes)
    last_beat = max(math.ceil(nt.offset) for nt in notes) - 1
    n_beats = max(last_beat - first_beat + 1, 1)
    beat_of = np.array([math.floor(nt.onset) - first_beat for nt in notes], dtype=np.int64)
    beat_x = np.zeros((n_beats, N_FEATURES))
    counts = np.bincount(beat_of, minlength=n_beats)
    np.add.at(beat_x, beat_of, x)
    for b in range(n_beats):
        if counts[b]:
            beat_x[b] /= counts[b]
        else:
            beat_x[b] = beat_x[b - 1]

    measures = sorted({nt.measure_number for nt in notes})
    measure_pos = {m: i for i, m in enumerate(measures)}
    measure_of = np.array([measure_pos[nt.measure_number] for nt in notes], dtype=np.int64)
    measure_x = np.zeros((len(measures), N_FEATURES))
    np.add.at(measure_x, measure_of, x)
    measure_x /= np.bincount(measure_of, minlength=len(measures))[:, None]

    idx = np.arange(n)
    edges[("note", "in", "beat")] = _pairs(idx, beat_of)
    edges[("beat", "contains", "note")] = _sorted_edges(_pairs(beat_of, idx))
    edges[("beat", "next", "beat")] = _chain(n_beats)
    edges[("beat", "prev", "beat")] = _sorted_edges(_chain(n_beats)[::-1].copy())
    edges[("note", "in", "measure")] = _pairs(idx, measure_of)
    edges[("measure", "contains", "note")] = _sorted_edges(_pairs(measure_of, idx))
    edges[("measure", "next", "measure")] = _chain(len(measures))
    edges[("measure", "prev", "measure")] = _sorted_edges(_chain(len(measures))[::-1].copy())

    midi = np.array([nt.midi for nt in notes])
    ids = np.array([nt.note_id for nt in notes], dtype=np.int64)
    order = np.lexsort((ids, midi, on))
    _, group = np.unique(on, return_inverse=True)
    return ScoreGraph(
        piece_id=piece,
        note_ids=ids,
        note_features=x,
        beat_features=beat_x,
        measure_features=measure_x,
        edges={k: edges[k] for k in EDGE_TYPES},
        note_order=order.astype(np.int64),
        onset=on / denom,
        offset=off / denom,
        onset_group=group.astype(np.int64),
    )


# ----------------------------------------------------------------------------
# Transposition augmentation
# ----------------------------------------------------------------------------


def transpose(notes, diatonic_steps: int, chromatic_semitones: int) -> list[NoteEvent]:
    """Transpose spelled notes; raises TranspositionInapplicable if out of range."""
    out = []
    for n in notes:
        step, alter, octave = pitch.transpose_step(
            n.pitch_step, n.pitch_alter, n.octave, diatonic_steps, chromatic_semitones)
        if not -2 <= alter <= 2 or not 0 <= octave <= 9:
            raise TranspositionInapplicable(
                f"note {n.note_id}: {n.pitch_step}{n.pitch_alter:+d} by "
                f"({diatonic_steps}, {chromatic_semitones})")
        if not 0 <= pitch.midi_pitch(step, alter, octave) <= 127:
            raise TranspositionInapplicable(f"note {n.note_id}: pitch leaves [0, 127]")
        out.append(NoteEvent(
            n.piece_id, n.note_id, n.onset, n.duration, step, alter, octave, n.voice, n.staff,
            n.measure_number, n.beat_in_measure, n.ts_numerator, n.ts_denominator))
    return out


def augmentations_for(notes) -> list[tuple[int, int]]:
    """The candidate intervals that can be applied to ``notes``."""
    ok = []
    for interval in CANDIDATE_INTERVALS:
        if interval == (0, 0):
            ok.append(interval)
            continue
        try:
            transpose(notes, *interval)
        except TranspositionInapplicable:
            continue
        ok.append(interval)
    return ok


def _transpose_key_label(value, d, c):
    return pitch.transpose_key(value, d, c)


def _transpose_spelled_label(value, d, c):
    return pitch.transpose_spelled(value, d, c)


def _transpose_pcset_label(value, d, c):
    return value if value == "other" else pitch.transpose_pcset(value, c)


# Tasks whose class names carry absolute pitch; all others are key-relative.
PITCH_LABEL_TASKS = {
    "local_key": _transpose_key_label,
    "tonicization": _transpose_key_label,
    "root": _transpose_spelled_label,
    "bass": _transpose_spelled_label,
    "pcset": _transpose_pcset_label,
}


def transpose_labels(frame: LabelFrame, schema: TaskSchema, diatonic: int, chromatic: int) -> LabelFrame:
    """Move absolute-pitch labels along with the notes.

    A transposed class missing from the vocabulary becomes ``other`` when the
    task has one, otherwise the entry is masked.
    """
    if (diatonic, chromatic) == (0, 0):
        return frame
    out = LabelFrame(frame.piece_id, frame.note_ids, dict(frame.labels), dict(frame.mask))
    for task in schema:
        fn = PITCH_LABEL_TASKS.get(task.name)
        if fn is None or task.name not in frame.labels:
            continue
        table = np.full(task.n_classes, MISSING, dtype=np.int64)
        for ci, cname in enumerate(task.classes):
            try:
                moved = fn(cname, diatonic, chromatic)
            except ValueError:
                moved = None
            idx = task.index(moved) if moved is not None else MISSING
            if idx == MISSING and "other" in task.classes:
                idx = task.index("other")
            table[ci] = idx
        old = frame.labels[task.name]
        new = np.where(frame.mask[task.name], table[np.where(old >= 0, old, 0)], MISSING)
        out.labels[task.name] = new
        out.mask[task.name] = frame.mask[task.name] & (new != MISSING)
    return out


# ----------------------------------------------------------------------------
# Subgraph sampling
# ----------------------------------------------------------------------------


@dataclass
class Subgraph:
    graph: ScoreGraph
    labels: LabelFrame | None
    target: np.ndarray
    note_index: np.ndarray
    beat_index: np.ndarray
    measure_index: np.ndarray


def induced_subgraph(g: ScoreGraph, notes_keep: np.ndarray) -> tuple[ScoreGraph, dict]:
    """Restrict ``g`` to the given notes plus the beat and measure ranges they span.

    Beats and measures are kept as contiguous index ranges, empty ones
    included, so the next/prev chains stay exact sub-chains of the full graph.
    """
    notes_keep = np.unique(notes_keep)

    def span(kind):
        idx = g.edges[("note", "in", kind)][1, notes_keep]
        return np.arange(idx.min(), idx.max() + 1) if len(idx) else idx

    beats_keep, measures_keep = span("beat"), span("measure")
    keep = {"note": notes_keep, "beat": beats_keep, "measure": measures_keep}
    remap = {}
    for ntype, kept in keep.items():
        m = np.full(g.num_nodes(ntype), -1, dtype=np.int64)
        m[kept] = np.arange(len(kept))
        remap[ntype] = m
    edges = {}
    for etype, e in g.edges.items():
        s, d = remap[etype[0]][e[0]], remap[etype[2]][e[1]]
        ok = (s >= 0) & (d >= 0)
        edges[etype] = np.array([s[ok], d[ok]]).reshape(2, -1)
    rank = np.empty(g.n_notes, dtype=np.int64)
    rank[g.note_order] = np.arange(g.n_notes)
    order = np.argsort(rank[notes_keep], kind="stable")
    _, group = np.unique(g.onset_group[notes_keep], return_inverse=True)
    sub = ScoreGraph(
        piece_id=g.piece_id,
        note_ids=g.note_ids[notes_keep],
        note_features=g.note_features[notes_keep],
        beat_features=g.beat_features[beats_keep],
        measure_features=g.measure_features[measures_keep],
        edges=edges,
        note_order=order.astype(np.int64),
        onset=g.onset[notes_keep],
        offset=g.offset[notes_keep],
        onset_group=group.astype(np.int64),
    )
    return sub, keep


def sample_subgraph(g: ScoreGraph, labelframe: LabelFrame | None, size: int, rng=None,
                    anchor: int | None = None) -> Subgraph:
    """Contiguous window of at most ``size`` notes plus its one-hop halo.

    ``anchor`` (a note index) fixes the window start; otherwise the start is
    drawn uniformly from ``rng``.  Halo notes are not targets and their label
    masks are cleared.
    """
    if size < 1:
        raise ValueError("size must be >= 1")
    n = g.n_notes
    if size >= n:
        window = np.arange(n)
    else:
        if anchor is not None:
            start = int(np.nonzero(g.note_order == anchor)[0][0])
            start = min(start, n - size)
        else:
            start = int(rng.integers(0, n - size + 1))
        window = np.sort(g.note_order[start:start + size])
    in_window = np.zeros(n, dtype=bool)
    in_window[window] = True
    include = in_window.copy()
    for rel in EDGE_TYPES:
        if rel[0] == "note" and rel[2] == "note":
            e = g.edges[rel]
            hit = in_window[e[0]]
            include[e[1][hit]] = True
            hit = in_window[e[1]]
            include[e[0][hit]] = True
    sub, keep = induced_subgraph(g, np.nonzero(include)[0])
    target = in_window[keep["note"]]
    labels = None
    if labelframe is not None:
        labels = labelframe.take(keep["note"])
        labels.mask = {k: v & target for k, v in labels.mask.items()}
    return Subgraph(sub, labels, target, keep["note"], keep["beat"], keep["measure"])


# ----------------------------------------------------------------------------
# On-disk cache
# ----------------------------------------------------------------------------

_MAGIC = b"SCOREGRAPH"


def cache_filename(piece_id: str, interval=(0, 0)) -> str:
    safe = re.sub(r"[^A-Za-z0-9_.-]", "_", piece_id)
    return f"{safe}__t{interval[0]:+d}{interval[1]:+d}__f{FEATURE_VERSION}.sgr"


def _arrays(g: ScoreGraph) -> dict:
    arrays = {
        "note_ids": g.note_ids, "note_features": g.note_features,
        "beat_features": g.beat_features, "measure_features": g.measure_features,
        "note_order": g.note_order, "onset": g.onset, "offset": g.offset,
        "onset_group": g.onset_group,
    }
    for etype in EDGE_TYPES:
        arrays["edge:" + ":".join(etype)] = g.edges[etype]
    return arrays


def serialize_graph(g: ScoreGraph) -> bytes:
    """Versioned binary layout: magic line, JSON header line, raw little-endian arrays."""
    arrays = _arrays(g)
    header = {"format": GRAPH_FORMAT_VERSION, "feature_version": FEATURE_VERSION,
              "piece_id": g.piece_id, "arrays": []}
    chunks = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype="<i8" if arr.dtype.kind in "iu" else "<f8")
        header["arrays"].append([name, arr.dtype.str, list(arr.shape)])
        chunks.append(arr.tobytes())
    return _MAGIC + b"\n" + json.dumps(header, sort_keys=True).encode() + b"\n" + b"".join(chunks)


def deserialize_graph(data: bytes) -> ScoreGraph:
    magic, header_line, body = data.split(b"\n", 2)
    if magic != _MAGIC:
        raise ValueError("not a score graph file")
    header = json.loads(header_line)
    if header["format"] != GRAPH_FORMAT_VERSION or header["feature_version"] != FEATURE_VERSION:
        raise ValueError("graph cache written by an incompatible version")
    arrays, pos = {}, 0
    for name, dtype, shape in header["arrays"]:
        dt = np.dtype(dtype)
        count = int(np.prod(shape)) if shape else 1
        arrays[name] = np.frombuffer(body, dtype=dt, count=count, offset=pos).reshape(shape).copy()
        pos += count * dt.itemsize
    edges = {et: arrays.pop("edge:" + ":".join(et)) for et in EDGE_TYPES}
    return ScoreGraph(piece_id=header["piece_id"], edges=edges, **arrays)


def save_graph(g: ScoreGraph, path) -> None:
    Path(path).write_bytes(serialize_graph(g))


def load_graph(path) -> ScoreGraph:
    return deserialize_graph(Path(path).read_bytes())
