"""Output alphabet: Unicode codepoints mapped to 1-based CTC labels.

Index 0 is reserved for the CTC blank and never appears in the symbol
table. The on-disk format is one codepoint per line, UTF-8, where line
1 holds the symbol for label 1.
"""

from __future__ import annotations

import hashlib
import logging
from typing import Iterable

from .errors import DataError, FormatError

log = logging.getLogger(__name__)

BLANK = 0
_FORBIDDEN = {"\n", "\r", "\t"}


class Alphabet:
    def __init__(self, symbols: Iterable[str]):
        self.symbols = tuple(symbols)
        if not self.symbols:
            raise DataError("alphabet must contain at least one symbol")
        for sym in self.symbols:
            if len(sym) != 1:
                raise DataError(f"alphabet symbols are single codepoints, got {sym!r}")
            if sym in _FORBIDDEN:
                raise DataError(f"control codepoint {sym!r} cannot be an alphabet symbol")
        if len(set(self.symbols)) != len(self.symbols):
            raise DataError("alphabet symbols must be unique")
        self._index = {sym: i + 1 for i, sym in enumerate(self.symbols)}

    def __len__(self) -> int:
        return len(self.symbols)

    @property
    def classes(self) -> int:
        """Network output width: one class per symbol plus the blank."""
        return len(self.symbols) + 1

    def __contains__(self, sym: str) -> bool:
        return sym in self._index

    def label_of(self, sym: str) -> int:
        return self._index[sym]

    def digest(self) -> str:
        return hashlib.sha256("\n".join(self.symbols).encode("utf-8")).hexdigest()

    def __eq__(self, other):
        return isinstance(other, Alphabet) and self.symbols == other.symbols


def build_alphabet(transcripts: Iterable[str]) -> Alphabet:
    """Sorted unique codepoints over all transcripts, labels 1..L."""
    seen = set()
    for text in transcripts:
        seen.update(text)
    seen -= _FORBIDDEN
    if not seen:
        raise DataError("no codepoints found; cannot build an alphabet from an empty corpus")
    return Alphabet(sorted(seen))


def encode(alphabet: Alphabet, text: str, context: str | None = None) -> list[int]:
    labels = []
    for ch in text:
        label = alphabet._index.get(ch)
        if label is None:
            where = f" in {context}" if context else ""
            raise DataError(f"codepoint U+{ord(ch):04X} {ch!r}{where} is not in the alphabet")
        labels.append(label)
    return labels


def decode(alphabet: Alphabet, labels: Iterable[int]) -> str:
    out = []
    for label in labels:
        if not 1 <= label <= len(alphabet.symbols):
            raise DataError(f"label {label} outside alphabet range 1..{len(alphabet.symbols)}")
        out.append(alphabet.symbols[label - 1])
    return "".join(out)


def drop_unknown(alphabet: Alphabet, text: str, context: str | None = None) -> str:
    """Strip codepoints outside the alphabet, warning once per call.

    Used on evaluation references so a stray character degrades the
    score instead of crashing the run.
    """
    kept = [ch for ch in text if ch in alphabet._index]
    if len(kept) != len(text):
        dropped = sorted({ch for ch in text if ch not in alphabet._index})
        where = f" in {context}" if context else ""
        log.warning("dropping %d codepoint(s) outside the alphabet%s: %r", len(text) - len(kept), where, dropped)
    return "".join(kept)


def save_alphabet(alphabet: Alphabet, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        for sym in alphabet.symbols:
            f.write(sym + "\n")


def load_alphabet(path) -> Alphabet:
    symbols = []
    with open(path, encoding="utf-8", newline="") as f:
        for lineno, line in enumerate(f, start=1):
            sym = line[:-1] if line.endswith("\n") else line
            if len(sym) != 1:
                raise FormatError(f"{path}: expected one codepoint per line, got {sym!r}", line=lineno)
            symbols.append(sym)
    if not symbols:
        raise FormatError(f"{path}: empty alphabet file", line=1)
    return Alphabet(symbols)
