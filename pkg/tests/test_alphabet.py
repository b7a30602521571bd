"""Transcript <-> label-sequence mapping."""

import pytest
from hypothesis import given, strategies as st

from ctcasr.alphabet import (
    BLANK,
    Alphabet,
    build_alphabet,
    decode,
    drop_unknown,
    encode,
    load_alphabet,
    save_alphabet,
)
from ctcasr.errors import DataError, FormatError


def test_blank_is_zero():
    assert BLANK == 0


def test_build_from_two_transcripts():
    alph = build_alphabet(["ab", "ba"])
    assert alph.symbols == ("a", "b")
    assert alph.classes == 3  # L + blank


def test_space_is_an_ordinary_symbol():
    alph = build_alphabet(["a a"])
    assert alph.symbols == (" ", "a")


def test_symbols_sorted_by_codepoint():
    alph = build_alphabet(["zyx", "abc"])
    assert list(alph.symbols) == sorted(alph.symbols)


def test_control_characters_excluded():
    alph = build_alphabet(["a\tb\nc"])
    assert alph.symbols == ("a", "b", "c")


def test_empty_corpus_rejected():
    with pytest.raises(DataError):
        build_alphabet(["", ""])


def test_encode_hand_case():
    alph = Alphabet(("a", "b"))
    assert encode(alph, "aba") == [1, 2, 1]


def test_decode_empty():
    assert decode(Alphabet(("a", "b")), []) == ""


def test_encode_unknown_names_codepoint():
    alph = Alphabet(("a",))
    with pytest.raises(DataError, match="U\\+0078"):
        encode(alph, "x")


def test_decode_out_of_range():
    alph = Alphabet(("a",))
    with pytest.raises(DataError):
        decode(alph, [2])


def test_blank_never_produced_by_encode():
    alph = build_alphabet(["hello world"])
    assert BLANK not in encode(alph, "hello world")


@given(st.text(alphabet="abcdef ", min_size=0, max_size=40))
def test_round_trip(text):
    alph = build_alphabet(["abcdef "])
    assert decode(alph, encode(alph, text)) == text


def test_drop_unknown_filters():
    alph = Alphabet(("a", "b"))
    assert drop_unknown(alph, "aXbY") == "ab"


def test_digest_tracks_content():
    a = Alphabet(("a", "b"))
    b = Alphabet(("a", "c"))
    assert a.digest() != b.digest()
    assert a.digest() == Alphabet(("a", "b")).digest()


def test_save_load_round_trip(tmp_path):
    alph = build_alphabet(["the quick brown fox"])
    p = tmp_path / "alphabet.txt"
    save_alphabet(alph, p)
    assert load_alphabet(p) == alph


def test_load_rejects_multi_codepoint_line(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("a\nbc\n", encoding="utf-8")
    with pytest.raises(FormatError, match="line 2"):
        load_alphabet(p)


def test_label_lookup():
    alph = Alphabet(("a", "b"))
    assert alph.label_of("b") == 2
    assert "b" in alph and "z" not in alph
