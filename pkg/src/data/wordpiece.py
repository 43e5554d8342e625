"""
Wordpiece vocabulary: greedy pair-merge training, encoding and decoding.

Merges never cross a word and units carry no boundary marks, so the
vocabulary holds only the reserved symbols, the characters and merged units.
Decoding places word breaks where each word re-encodes to its own units,
preferring the words seen in training.
"""
import os
import logging
from collections import Counter
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

from src.utils.errors import UsageError, CorpusError

logger = logging.getLogger('Cascade.Data')

BLANK = '<blank>'
UNK = '<unk>'
MASK = '<mask>'
RESERVED = (BLANK, UNK, MASK)
BLANK_ID = 0
UNK_ID = 1
MASK_ID = 2

FILE_HEADER = '# cascade wordpiece v2'

TextLike = Union[str, Sequence[str]]


def _words(text: TextLike) -> List[str]:
    if isinstance(text, str):
        return text.split()
    return [w for w in text if w]


def _char_inventory(texts: Iterable[TextLike]) -> List[str]:
    chars = set()
    for text in texts:
        for word in _words(text):
            chars.update(word)
    return sorted(chars)


class WordpieceModel:
    """Ordered units (reserved symbols, characters, merged units), ranked merges and the training words."""

    def __init__(self, vocabulary: List[str], merges: List[Tuple[str, str]], lexicon: Iterable[str] = ()):
        if list(vocabulary[:3]) != list(RESERVED):
            raise UsageError(f"vocabulary must start with {RESERVED}")
        self.vocabulary = list(vocabulary)
        self.merges = [tuple(m) for m in merges]
        self.lexicon = sorted(set(lexicon))
        self.ids: Dict[str, int] = {unit: i for i, unit in enumerate(self.vocabulary)}
        self.ranks: Dict[Tuple[str, str], int] = {m: i for i, m in enumerate(self.merges)}
        self._cache: Dict[str, List[int]] = {}
        self._known_words = set(self.lexicon)
        self._longest = max((len(self._segment(w)) for w in self.lexicon), default=1)

    def __len__(self) -> int:
        return len(self.vocabulary)

    @property
    def characters(self) -> List[str]:
        return [u for u in self.vocabulary[3:] if len(u) == 1]

    def _segment(self, word: str) -> List[str]:
        symbols = [c if c in self.ids else UNK for c in word]
        while len(symbols) > 1:
            best = None
            for pair in zip(symbols, symbols[1:]):
                rank = self.ranks.get(pair)
                if rank is not None and (best is None or rank < best[0]):
                    best = (rank, pair)
            if best is None:
                break
            first, second = best[1]
            merged: List[str] = []
            i = 0
            while i < len(symbols):
                if i + 1 < len(symbols) and symbols[i] == first and symbols[i + 1] == second:
                    merged.append(first + second)
                    i += 2
                else:
                    merged.append(symbols[i])
                    i += 1
            symbols = merged
        return symbols

    def encode_word(self, word: str) -> List[int]:
        cached = self._cache.get(word)
        if cached is None:
            cached = [self.ids[s] for s in self._segment(word)]
            self._cache[word] = cached
        return list(cached)

    def encode(self, text: TextLike) -> List[int]:
        """
        Encode a word sequence (or whitespace-separated string) to unit ids.

        Characters outside the training inventory map to the unknown id.
        """
        ids: List[int] = []
        for word in _words(text):
            ids.extend(self.encode_word(word))
        return ids

    def units(self, ids: Sequence[int]) -> List[str]:
        out = []
        for i in ids:
            if not 0 <= int(i) < len(self.vocabulary):
                raise UsageError(f"wordpiece id {i} outside vocabulary of size {len(self.vocabulary)}")
            out.append(self.vocabulary[int(i)])
        return out

    def _split_words(self, units: List[str]) -> List[str]:
        # best[end] = ((-unsound, lexicon chars, -words), start of last word)
        best: List[Optional[Tuple[Tuple[int, int, int], int]]] = [None] * (len(units) + 1)
        best[0] = ((0, 0, 0), 0)
        for end in range(1, len(units) + 1):
            for start in range(max(0, end - self._longest), end):
                if best[start] is None:
                    continue
                group = units[start:end]
                word = ''.join(group)
                sound = UNK not in group and self.encode_word(word) == [self.ids[u] for u in group]
                if not sound and len(group) > 1:
                    continue
                (unsound, covered, words), _ = best[start]
                score = (unsound - (not sound),
                         covered + (len(word) if word in self._known_words else 0),
                         words - 1)
                if best[end] is None or score > best[end][0]:
                    best[end] = (score, start)

        out: List[str] = []
        end = len(units)
        while end > 0:
            start = best[end][1]
            out.append(''.join(units[start:end]))
            end = start
        return out[::-1]

    def decode(self, ids: Sequence[int]) -> str:
        """
        Join units back into a space-separated string; blank and mask are dropped.

        Word breaks go where every word re-encodes to exactly its units. Among
        those splits the one covering the most characters with training words
        wins, then the one with fewer words. A unit that cannot stand as a word
        of its own is still emitted alone.
        """
        pieces = [u for u in self.units(ids) if u not in (BLANK, MASK)]
        return ' '.join(self._split_words(pieces))

    def words(self, ids: Sequence[int]) -> List[str]:
        return self.decode(ids).split()

    def save(self, path: str) -> None:
        os.makedirs(os.path.dirname(path) or '.', exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            f.write(FILE_HEADER + '\n')
            f.write(f"units {len(self.vocabulary)}\n")
            for unit in self.vocabulary:
                f.write(unit + '\n')
            f.write(f"merges {len(self.merges)}\n")
            for first, second in self.merges:
                f.write(f"{first} {second}\n")
            f.write(f"words {len(self.lexicon)}\n")
            for word in self.lexicon:
                f.write(word + '\n')

    @classmethod
    def load(cls, path: str) -> 'WordpieceModel':
        try:
            with open(path, 'r', encoding='utf-8') as f:
                lines = f.read().split('\n')
        except OSError as e:
            raise CorpusError(f"cannot read wordpiece model {path}: {e}")
        if not lines or lines[0] != FILE_HEADER:
            raise CorpusError(f"{path} is not a wordpiece model file")
        try:
            n_units = int(lines[1].split()[1])
            vocabulary = lines[2:2 + n_units]
            at = 2 + n_units
            n_merges = int(lines[at].split()[1])
            merges = [tuple(line.split(' ')) for line in lines[at + 1:at + 1 + n_merges]]
            at += 1 + n_merges
            n_words = int(lines[at].split()[1])
            lexicon = lines[at + 1:at + 1 + n_words]
        except (IndexError, ValueError) as e:
            raise CorpusError(f"{path}: malformed wordpiece model ({e})")
        return cls(vocabulary, merges, lexicon)


def build_wordpiece_model(texts: Iterable[TextLike], vocab_size: int) -> WordpieceModel:
    """
    Train a pair-merge wordpiece model.

    Each step merges the most frequent adjacent pair inside a word; equal
    counts go to the lexicographically smallest pair. Training stops once the
    vocabulary holds exactly vocab_size units.

    Args:
        texts: Training word sequences
        vocab_size: Vocabulary size including the three reserved symbols

    Returns:
        WordpieceModel

    Raises:
        UsageError: vocab_size is below the character inventory plus the
            reserved symbols, or above what merging these texts can reach
    """
    texts = list(texts)
    inventory = _char_inventory(texts)
    if vocab_size < len(inventory) + len(RESERVED):
        raise UsageError(
            f"vocab_size {vocab_size} is below the character inventory "
            f"({len(inventory)}) plus {len(RESERVED)} reserved symbols")

    word_counts: Counter = Counter()
    for text in texts:
        word_counts.update(_words(text))
    segmented = {word: list(word) for word in word_counts}

    vocabulary = list(RESERVED) + inventory
    known = set(vocabulary)
    merges: List[Tuple[str, str]] = []
    while len(vocabulary) < vocab_size:
        pair_counts: Counter = Counter()
        for word, symbols in segmented.items():
            count = word_counts[word]
            for pair in zip(symbols, symbols[1:]):
                pair_counts[pair] += count
        if not pair_counts:
            raise UsageError(
                f"vocab_size {vocab_size} is out of reach: merging these texts "
                f"stops at {len(vocabulary)} units")
        best_count = max(pair_counts.values())
        best = min(p for p, c in pair_counts.items() if c == best_count)
        merges.append(best)
        unit = best[0] + best[1]
        if unit not in known:
            known.add(unit)
            vocabulary.append(unit)
        for word, symbols in segmented.items():
            merged: List[str] = []
            i = 0
            while i < len(symbols):
                if i + 1 < len(symbols) and (symbols[i], symbols[i + 1]) == best:
                    merged.append(unit)
                    i += 2
                else:
                    merged.append(symbols[i])
                    i += 1
            segmented[word] = merged

    logger.info(f"Built wordpiece model: {len(vocabulary)} units, {len(merges)} merges")
    return WordpieceModel(vocabulary, merges, word_counts)
