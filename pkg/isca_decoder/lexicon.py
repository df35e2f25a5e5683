"""
Pronunciation lexicons: loading, writing and graphemic derivation.
"""

from pathlib import Path
from typing import Iterable

from pydantic import ValidationError

from .constants import SPECIAL_WORDS
from .errors import InputFormatError, InventoryError, LexiconError
from .formats import atomic_write_text
from .schemas import Lexicon, UnitInventory


def _resolve(label: str, inventory: UnitInventory, where: str) -> int:
    idx = inventory.index_of(label)
    if idx is None:
        raise InventoryError(f"{where}unknown unit label {label!r}")
    if idx == inventory.blank_index:
        raise LexiconError(f"{where}pronunciation uses the blank unit {label!r}")
    return idx


def load_lexicon(path: Path, inventory: UnitInventory) -> Lexicon:
    """Read "WORD unit unit ..." lines; repeated words accumulate pronunciations."""
    path = Path(path)
    entries: dict[str, list[tuple[int, ...]]] = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        parts = raw.split()
        if not parts:
            continue
        word = parts[0].upper()
        if len(parts) == 1:
            raise LexiconError(f"{path}:{lineno}: empty pronunciation for {word!r}")
        pron = tuple(_resolve(lab, inventory, f"{path}:{lineno}: ") for lab in parts[1:])
        prons = entries.setdefault(word, [])
        if pron in prons:
            raise LexiconError(f"{path}:{lineno}: duplicate pronunciation for {word!r}")
        prons.append(pron)
    if not entries:
        raise InputFormatError("lexicon has no entries", path)
    try:
        return Lexicon(inventory=inventory, entries={w: tuple(p) for w, p in entries.items()})
    except ValidationError as exc:
        raise LexiconError(f"{path}: {exc.errors()[0]['msg']}") from None


def write_lexicon(lexicon: Lexicon, path: Path) -> None:
    lines = []
    for word in lexicon.words:
        for pron in lexicon.entries[word]:
            lines.append(" ".join([word, *lexicon.inventory.label_sequence(pron)]) + "\n")
    atomic_write_text(path, "".join(lines))


def derive_graphemic_lexicon(words: Iterable[str], inventory: UnitInventory) -> Lexicon:
    """Spell every word with its own characters: CAT → c a t.

    Words are uppercased; each character is looked up lowercased first, then as-is.
    Special LM tokens (<s>, </s>, <unk>) are skipped.
    """
    entries: dict[str, tuple[tuple[int, ...], ...]] = {}
    for raw in words:
        if raw in SPECIAL_WORDS:
            continue
        word = raw.upper()
        if not word or word in entries:
            continue
        units = []
        for ch in word:
            idx = inventory.index_of(ch.lower())
            if idx is None:
                idx = inventory.index_of(ch)
            if idx is None or idx == inventory.blank_index:
                raise InventoryError(f"character {ch!r} of word {word!r} is not in the unit inventory")
            units.append(idx)
        entries[word] = (tuple(units),)
    if not entries:
        raise LexiconError("no words to derive a lexicon from")
    return Lexicon(inventory=inventory, entries=entries)
