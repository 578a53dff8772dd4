"""Buckwalter transliteration and the CTC output alphabet."""

from __future__ import annotations

import unicodedata
from dataclasses import dataclass
from importlib import resources
from typing import Iterable, Sequence

BLANK = "<b>"
SPACE = " "


class TranslitError(ValueError):
    pass


class UnmappedCharacterError(TranslitError):
    def __init__(self, char: str, position: int, direction: str):
        self.char = char
        self.position = position
        super().__init__(f"unmapped character {char!r} (U+{ord(char):04X}) at position {position} ({direction})")


class DiacriticError(UnmappedCharacterError):
    """Raised for combining marks; transcripts are expected undiacritized."""


class AlphabetError(ValueError):
    pass


def _is_diacritic(ch: str) -> bool:
    return unicodedata.category(ch) == "Mn"


class TranslitTable:
    """A bijection between single Arabic codepoints and single roman symbols."""

    def __init__(self, pairs: Iterable[tuple[str, str]]):
        self.pairs = tuple(pairs)
        self._to_roman: dict[str, str] = {}
        self._to_arabic: dict[str, str] = {}
        for arabic, roman in self.pairs:
            if len(arabic) != 1 or len(roman) != 1:
                raise ValueError(f"table entries must be single characters: {arabic!r} -> {roman!r}")
            if SPACE in (arabic, roman):
                raise ValueError("space is implicit in the table and must not be listed")
            if _is_diacritic(arabic):
                raise ValueError(f"diacritic U+{ord(arabic):04X} not allowed in table domain")
            if arabic in self._to_roman or roman in self._to_arabic:
                raise ValueError(f"duplicate mapping {arabic!r} <-> {roman!r}")
            self._to_roman[arabic] = roman
            self._to_arabic[roman] = arabic

    @classmethod
    def load(cls, path=None) -> "TranslitTable":
        """Read a tab-separated fixture; ``None`` loads the bundled Buckwalter table."""
        if path is None:
            text = resources.files("convctc").joinpath("data/buckwalter.tsv").read_text(encoding="utf-8")
        else:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        pairs = []
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 2:
                raise ValueError(f"line {lineno}: expected 'arabic<TAB>roman', got {line!r}")
            pairs.append((fields[0], fields[1]))
        return cls(pairs)

    @property
    def domain(self) -> list[str]:
        return list(self._to_roman)

    @property
    def range(self) -> list[str]:
        return list(self._to_arabic)

    def __len__(self) -> int:
        return len(self.pairs)


_default_table: TranslitTable | None = None


def default_table() -> TranslitTable:
    global _default_table
    if _default_table is None:
        _default_table = TranslitTable.load()
    return _default_table


def arabic_to_roman(text: str, table: TranslitTable | None = None) -> str:
    table = table or default_table()
    out = []
    for i, ch in enumerate(text):
        if ch == SPACE:
            out.append(SPACE)
            continue
        roman = table._to_roman.get(ch)
        if roman is None:
            err = DiacriticError if _is_diacritic(ch) else UnmappedCharacterError
            raise err(ch, i, "arabic->roman")
        out.append(roman)
    return "".join(out)


def roman_to_arabic(text: str, table: TranslitTable | None = None) -> str:
    table = table or default_table()
    out = []
    for i, ch in enumerate(text):
        if ch == SPACE:
            out.append(SPACE)
            continue
        arabic = table._to_arabic.get(ch)
        if arabic is None:
            raise UnmappedCharacterError(ch, i, "roman->arabic")
        out.append(arabic)
    return "".join(out)


@dataclass(frozen=True)
class Alphabet:
    """CTC output symbols; index 0 is the blank."""

    symbols: tuple[str, ...]

    def __post_init__(self):
        if not self.symbols or self.symbols[0] != BLANK:
            raise ValueError("alphabet must start with the blank symbol")
        if len(set(self.symbols)) != len(self.symbols):
            raise ValueError("alphabet symbols must be distinct")
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(self.symbols)})

    @classmethod
    def from_symbols(cls, symbols: Iterable[str]) -> "Alphabet":
        return cls((BLANK, *symbols))

    @classmethod
    def from_table(cls, table: TranslitTable | None = None) -> "Alphabet":
        table = table or default_table()
        return cls.from_symbols(sorted({SPACE, *table.range}))

    @property
    def size(self) -> int:
        return len(self.symbols)

    @property
    def blank(self) -> int:
        return 0


def encode_labels(text: str, alphabet: Alphabet) -> list[int]:
    ids = []
    for i, ch in enumerate(text):
        idx = alphabet._index.get(ch)
        if idx is None or idx == 0:
            raise AlphabetError(f"character {ch!r} at position {i} is not in the alphabet")
        ids.append(idx)
    return ids


def decode_ids(ids: Sequence[int], alphabet: Alphabet) -> str:
    out = []
    for i in ids:
        i = int(i)
        if i <= 0 or i >= alphabet.size:
            raise AlphabetError(f"label id {i} outside [1, {alphabet.size - 1}]")
        out.append(alphabet.symbols[i])
    return "".join(out)
