import itertools

import pytest
from hypothesis import given
from hypothesis import strategies as st

from convctc.translit import (
    BLANK,
    Alphabet,
    AlphabetError,
    DiacriticError,
    TranslitTable,
    UnmappedCharacterError,
    arabic_to_roman,
    decode_ids,
    default_table,
    encode_labels,
    roman_to_arabic,
)

TABLE = default_table()
ARABIC = "".join(TABLE.domain) + " "
ROMAN = "".join(TABLE.range) + " "


def test_fixture_is_a_bijection():
    assert len(TABLE) == 36
    assert len(set(TABLE.domain)) == len(TABLE.domain) == len(set(TABLE.range))


@pytest.mark.parametrize("arabic,roman", [("", ""), ("ب", "b"), ("بت", "bt"), ("ش", "$"), ("ة", "p"), ("ب ت", "b t")])
def test_known_pairs(arabic, roman):
    assert arabic_to_roman(arabic) == roman
    assert roman_to_arabic(roman) == arabic


def test_exhaustive_round_trip():
    for a in TABLE.domain:
        assert roman_to_arabic(arabic_to_roman(a)) == a
    for r in TABLE.range:
        assert arabic_to_roman(roman_to_arabic(r)) == r
    for a, b in itertools.product(TABLE.domain, repeat=2):
        assert roman_to_arabic(arabic_to_roman(a + " " + b)) == a + " " + b


@given(st.text(alphabet=ARABIC, max_size=40))
def test_round_trip_arabic(s):
    r = arabic_to_roman(s)
    assert len(r) == len(s)
    assert roman_to_arabic(r) == s


@given(st.text(alphabet=ROMAN, max_size=40))
def test_round_trip_roman(s):
    assert arabic_to_roman(roman_to_arabic(s)) == s


def test_unmapped_reports_position():
    with pytest.raises(UnmappedCharacterError) as info:
        arabic_to_roman("بت5")
    assert info.value.position == 2
    with pytest.raises(UnmappedCharacterError):
        roman_to_arabic("b@")


def test_diacritics_are_rejected():
    with pytest.raises(DiacriticError):
        arabic_to_roman("بَ")  # fatha


def test_table_rejects_non_bijective(tmp_path):
    p = tmp_path / "t.tsv"
    p.write_text("# comment\nب\tb\nت\tb\n", encoding="utf-8")
    with pytest.raises(ValueError):
        TranslitTable.load(p)
    with pytest.raises(ValueError):
        TranslitTable([("َ", "a")])


def test_custom_table_file(tmp_path):
    p = tmp_path / "t.tsv"
    p.write_text("# tiny\nب\tb\n\nت\tt\n", encoding="utf-8")
    t = TranslitTable.load(p)
    assert arabic_to_roman("تب", t) == "tb"


# ---------------------------------------------------------------- alphabet


def test_alphabet_from_table():
    a = Alphabet.from_table()
    assert a.symbols[0] == BLANK
    assert a.size == 38  # blank + space + 36 letters
    assert list(a.symbols[1:]) == sorted(a.symbols[1:])
    assert " " in a.symbols


def test_encode_decode_small():
    a = Alphabet.from_symbols("ab")
    assert encode_labels("", a) == []
    assert encode_labels("ab", a) == [1, 2]
    assert decode_ids([], a) == ""
    assert decode_ids([1, 2], a) == "ab"


def test_encode_decode_errors():
    a = Alphabet.from_symbols("ab")
    with pytest.raises(AlphabetError):
        encode_labels("abc", a)
    with pytest.raises(AlphabetError):
        decode_ids([0], a)
    with pytest.raises(AlphabetError):
        decode_ids([3], a)
    with pytest.raises(ValueError):
        Alphabet.from_symbols("aa")


@given(st.text(alphabet=ROMAN, max_size=30))
def test_encode_decode_inverse(s):
    a = Alphabet.from_table()
    ids = encode_labels(s, a)
    assert 0 not in ids
    assert all(1 <= i < a.size for i in ids)
    assert decode_ids(ids, a) == s
