"""
Grapheme-to-phoneme lookup for the synthetic lexicon.
"""
import logging
from typing import Dict, Iterable, List, Optional, Sequence

from src.frontends.text import (
    PHONEME_IDS, PROPER_NOUN_PHONEME, WORD_SEPARATOR_PHONEME, PhonemeSequence,
)

logger = logging.getLogger('Cascade.Data')

PROPER_NOUN_MARKER = '@'
DIGRAPHS = {'ch': 'CH', 'sh': 'SH', 'th': 'TH', 'ng': 'NG'}


def fallback_phonemes(word: str) -> List[str]:
    """One phoneme per character; characters without a phoneme are dropped."""
    out = []
    for ch in word:
        if ch == PROPER_NOUN_MARKER:
            out.append(PROPER_NOUN_PHONEME)
        elif ch.upper() in PHONEME_IDS and ch.isalpha():
            out.append(ch.upper())
    return out


def rule_phonemes(word: str) -> List[str]:
    """Letter-to-sound rules used to fill the table: digraphs, collapsed double letters."""
    out: List[str] = []
    i = 0
    while i < len(word):
        pair = word[i:i + 2]
        if pair in DIGRAPHS:
            out.append(DIGRAPHS[pair])
            i += 2
            continue
        ch = word[i]
        if ch == PROPER_NOUN_MARKER:
            out.append(PROPER_NOUN_PHONEME)
        elif ch.isalpha() and not (i > 0 and word[i - 1] == ch):
            out.append(ch.upper())
        i += 1
    return out


class G2PTable:
    """Per-word phoneme table with a per-character fallback for words outside it."""

    def __init__(self, entries: Optional[Dict[str, List[str]]] = None):
        self.entries: Dict[str, List[str]] = dict(entries or {})

    @classmethod
    def from_words(cls, words: Iterable[str]) -> 'G2PTable':
        table = cls({w: rule_phonemes(w) for w in sorted(set(words))})
        logger.debug(f"G2P table built with {len(table.entries)} entries")
        return table

    def __contains__(self, word: str) -> bool:
        return word in self.entries

    def lookup(self, word: str) -> List[str]:
        if word in self.entries:
            return list(self.entries[word])
        return fallback_phonemes(word)


def grapheme_to_phoneme(text: Sequence[str], table: G2PTable) -> PhonemeSequence:
    """
    Convert a word sequence to phoneme ids, with SP between words.

    Args:
        text: Words
        table: Lookup table

    Returns:
        PhonemeSequence (no positions masked)
    """
    symbols: List[str] = []
    for i, word in enumerate(text):
        if i:
            symbols.append(WORD_SEPARATOR_PHONEME)
        symbols.extend(table.lookup(word))
    return PhonemeSequence(ids=[PHONEME_IDS[s] for s in symbols])
