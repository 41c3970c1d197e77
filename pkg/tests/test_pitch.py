import pytest
from hypothesis import given
from hypothesis import strategies as st

from scoregnn import pitch


def test_spelled_round_trip():
    for name in pitch.spelled_vocabulary():
        assert pitch.spelled_name(*pitch.parse_spelled(name)) == name
    assert len(pitch.spelled_vocabulary()) == 35


def test_midi_pitch():
    assert pitch.midi_pitch("C", 0, 4) == 60
    assert pitch.midi_pitch("B", 1, 3) == 60
    assert pitch.midi_pitch("A", 0, 4) == 69


@pytest.mark.parametrize("src, interval, dst", [
    (("C", 1, 4), (1, 2), ("D", 1, 4)),
    (("B", -1, 3), (3, 5), ("E", -1, 4)),
    (("G", 2, 4), (1, 2), ("A", 2, 4)),
    (("C", 0, 4), (-1, -1), ("B", 0, 3)),
])
def test_transpose_step(src, interval, dst):
    assert pitch.transpose_step(*src, *interval) == dst


def test_transpose_needing_triple_sharp():
    step, alter, _ = pitch.transpose_step("G", 2, 4, 0, 1)
    assert (step, alter) == ("G", 3)


@given(st.sampled_from("CDEFGAB"), st.integers(-2, 2), st.integers(1, 7),
       st.integers(-3, 3), st.integers(-5, 5))
def test_transpose_moves_chromatic_pitch_exactly(step, alter, octave, d, c):
    s, a, o = pitch.transpose_step(step, alter, octave, d, c)
    assert 12 * (o + 1) + pitch.STEP_SEMITONE[s] + a == pitch.midi_pitch(step, alter, octave) + c
    assert pitch.transpose_step(s, a, o, -d, -c) == (step, alter, octave)


def test_key_vocabulary():
    keys = pitch.key_vocabulary()
    assert len(keys) == len(set(keys)) == 30
    assert "C" in keys and "a" in keys and "Cb" in keys and "a#" in keys


def test_transpose_key():
    assert pitch.transpose_key("C", 4, 7) == "G"
    assert pitch.transpose_key("a", 1, 2) == "b"
    assert pitch.transpose_key("C#", 1, 2) == "D#"
    assert "D#" not in pitch.key_vocabulary()


def test_pcset():
    assert pitch.pcset_name([7, 0, 4]) == "0.4.7"
    assert pitch.transpose_pcset("0.4.7", 2) == "2.6.9"
    assert pitch.transpose_pcset("2.7.11", 1) == "0.3.8"
