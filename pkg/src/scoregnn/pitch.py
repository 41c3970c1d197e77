"""Pitch spelling arithmetic: spelled pitch classes, keys and pitch-class sets."""

from __future__ import annotations

STEPS = "CDEFGAB"
STEP_SEMITONE = {"C": 0, "D": 2, "E": 4, "F": 5, "G": 7, "A": 9, "B": 11}
ALTERS = (-2, -1, 0, 1, 2)
ACCIDENTAL = {-2: "bb", -1: "b", 0: "", 1: "#", 2: "##"}
_ACCIDENTAL_TO_ALTER = {v: k for k, v in ACCIDENTAL.items()}

# Major tonics along the line of fifths, Cb (7 flats) .. C# (7 sharps).
MAJOR_TONICS = ("Cb", "Gb", "Db", "Ab", "Eb", "Bb", "F", "C", "G", "D", "A", "E", "B", "F#", "C#")
# Relative minors of the same fifteen key signatures.
MINOR_TONICS = ("Ab", "Eb", "Bb", "F", "C", "G", "D", "A", "E", "B", "F#", "C#", "G#", "D#", "A#")


def spelled_name(step: str, alter: int) -> str:
    return step + ACCIDENTAL[alter]


def parse_spelled(name: str) -> tuple[str, int]:
    """Split e.g. ``"F#"`` into ``("F", 1)``; raise ValueError if malformed."""
    if not name or name[0].upper() not in STEPS:
        raise ValueError(f"bad pitch name {name!r}")
    acc = name[1:]
    if acc not in _ACCIDENTAL_TO_ALTER:
        raise ValueError(f"bad accidental in {name!r}")
    return name[0].upper(), _ACCIDENTAL_TO_ALTER[acc]


def pitch_class(step: str, alter: int) -> int:
    return (STEP_SEMITONE[step] + alter) % 12


def spelled_index(step: str, alter: int) -> int:
    """Index in the 35-way spelled pitch-class vocabulary (step-major)."""
    return STEPS.index(step) * 5 + (alter + 2)


def spelled_vocabulary() -> list[str]:
    return [spelled_name(s, a) for s in STEPS for a in ALTERS]


def midi_pitch(step: str, alter: int, octave: int) -> int:
    return 12 * (octave + 1) + STEP_SEMITONE[step] + alter


def transpose_step(step: str, alter: int, octave: int, diatonic: int, chromatic: int):
    """Move a spelled pitch by a (diatonic steps, semitones) interval.

    Returns ``(step, alter, octave)``; the alteration may fall outside the
    double-accidental range, callers check.
    """
    idx = STEPS.index(step) + diatonic
    carry, new_idx = divmod(idx, 7)
    new_step = STEPS[new_idx]
    natural_shift = STEP_SEMITONE[new_step] - STEP_SEMITONE[step] + 12 * carry
    return new_step, alter + chromatic - natural_shift, octave + carry


def transpose_spelled(name: str, diatonic: int, chromatic: int) -> str | None:
    """Transpose a spelled pitch class name; None if it needs a triple accidental."""
    step, alter = parse_spelled(name)
    new_step, new_alter, _ = transpose_step(step, alter, 4, diatonic, chromatic)
    if new_alter not in ACCIDENTAL:
        return None
    return spelled_name(new_step, new_alter)


def key_vocabulary() -> list[str]:
    """Major keys in upper case, minor keys in lower case (30 names)."""
    return list(MAJOR_TONICS) + [t[0].lower() + t[1:] for t in MINOR_TONICS]


def parse_key(name: str) -> tuple[str, int, bool]:
    """Return ``(step, alter, is_major)`` for a key name such as ``"Eb"`` or ``"f#"``."""
    step, alter = parse_spelled(name)
    return step, alter, name[0].isupper()


def key_name(step: str, alter: int, major: bool) -> str:
    name = spelled_name(step, alter)
    return name if major else name[0].lower() + name[1:]


def transpose_key(name: str, diatonic: int, chromatic: int) -> str | None:
    step, alter, major = parse_key(name)
    tonic = transpose_spelled(spelled_name(step, alter), diatonic, chromatic)
    if tonic is None:
        return None
    s, a = parse_spelled(tonic)
    return key_name(s, a, major)


def pcset_name(pcs) -> str:
    return ".".join(str(p) for p in sorted({int(p) % 12 for p in pcs}))


def transpose_pcset(name: str, chromatic: int) -> str:
    pcs = [int(p) for p in name.split(".")]
    return pcset_name(p + chromatic for p in pcs)
