"""Corpus ingestion: poem parsing, character vocabulary, training sequences.

Corpus file format: UTF-8 text, one poem per line, lines separated by `|`,
lines starting with `#` are comments. A quatrain has exactly 4 lines of 5
characters (FiveChar) or 7 characters (SevenChar); genre is inferred.
"""

from dataclasses import dataclass, field
from enum import Enum


class Genre(Enum):
    FIVE_CHAR = 5
    SEVEN_CHAR = 7


# reserved vocabulary slots
PAD, BOS, EOS, SEP, UNK = 0, 1, 2, 3, 4
RESERVED = {"<pad>": PAD, "<bos>": BOS, "<eos>": EOS, "<sep>": SEP, "<unk>": UNK}
N_RESERVED = len(RESERVED)


@dataclass
class Poem:
    genre: Genre
    lines: list          # 4 strings of genre length
    source_id: str = ""

    def chars(self):
        return [c for line in self.lines for c in line]


@dataclass
class ParseReport:
    poems: list
    rejected: int = 0
    reasons: list = field(default_factory=list)


class CorpusError(Exception):
    pass


def _classify(lines):
    """Return the genre for 4 well-formed lines, or None with a reason."""
    if len(lines) != 4:
        return None, "expected 4 lines, got %d" % len(lines)
    lengths = {len(l) for l in lines}
    if lengths == {5}:
        return Genre.FIVE_CHAR, None
    if lengths == {7}:
        return Genre.SEVEN_CHAR, None
    return None, "line lengths %s are not uniformly 5 or 7" % sorted(len(l) for l in lines)


def parse_corpus(path, genre_filter=None):
    """Parse a corpus file. Malformed records are skipped and counted.

    Returns a ParseReport; poems keep 1-based record numbers as source ids.
    """
    try:
        with open(path, encoding="utf-8") as f:
            raw = f.read()
    except OSError as e:
        raise CorpusError("cannot read corpus %s: %s" % (path, e)) from e
    report = ParseReport(poems=[])
    for lineno, record in enumerate(raw.splitlines(), start=1):
        record = record.strip()
        if not record or record.startswith("#"):
            continue
        lines = [seg.strip() for seg in record.split("|")]
        genre, reason = _classify(lines)
        if genre is None:
            report.rejected += 1
            report.reasons.append("record %d: %s" % (lineno, reason))
            continue
        if genre_filter is not None and genre != genre_filter:
            continue
        report.poems.append(Poem(genre=genre, lines=lines, source_id=str(lineno)))
    return report


class Vocab:
    """Bidirectional char<->id map with reserved tokens at fixed low ids."""

    def __init__(self):
        self.char_to_id = dict(RESERVED)
        self.id_to_char = {i: c for c, i in RESERVED.items()}
        self.freq = {}

    def __len__(self):
        return len(self.char_to_id)

    def id(self, char):
        return self.char_to_id.get(char, UNK)

    def char(self, idx):
        return self.id_to_char[idx]

    def encode(self, text):
        return [self.id(c) for c in text]

    def export_tsv(self, path):
        with open(path, "w", encoding="utf-8") as f:
            for char, idx in self.char_to_id.items():
                f.write("%s\t%d\t%d\n" % (char, idx, self.freq.get(char, 0)))


def build_vocab(poems, min_count=1):
    """Count characters over poems; chars below min_count fall back to UNK.

    Deterministic: ids are assigned in first-occurrence order.
    """
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    vocab = Vocab()
    counts = {}
    order = []
    for poem in poems:
        for c in poem.chars():
            if c not in counts:
                counts[c] = 0
                order.append(c)
            counts[c] += 1
    next_id = N_RESERVED
    for c in order:
        if counts[c] >= min_count:
            vocab.char_to_id[c] = next_id
            vocab.id_to_char[next_id] = c
            next_id += 1
    vocab.freq = counts
    return vocab


def filter_poems(poems, vocab, max_unk_fraction=0.99):
    """Drop poems whose UNK fraction exceeds the threshold.

    Returns (kept, removed_count). The default 0.99 removes exactly the poems
    made up entirely of out-of-vocabulary characters.
    """
    if not 0.0 <= max_unk_fraction <= 1.0:
        raise ValueError("max_unk_fraction must be in [0,1]")
    kept = []
    removed = 0
    for poem in poems:
        chars = poem.chars()
        unk = sum(1 for c in chars if vocab.id(c) == UNK)
        if unk / len(chars) > max_unk_fraction:
            removed += 1
        else:
            kept.append(poem)
    return kept, removed


@dataclass
class TrainingExample:
    input_ids: list
    target_ids: list
    genre: Genre
    source_id: str = ""


def build_training_sequence(poem, vocab, echo=True):
    """Turn a poem into a teacher-forcing example.

    Input is the first line. The target walks the lines 1-2-3-4 and, when
    `echo` is on, repeats line 1 at the end; lines are joined with SEP and the
    target finishes with EOS. Lengths: 5-char -> 30, 7-char -> 40 (echo on).
    """
    input_ids = vocab.encode(poem.lines[0])
    seq = list(poem.lines)
    if echo:
        seq.append(poem.lines[0])
    target = []
    for i, line in enumerate(seq):
        if i > 0:
            target.append(SEP)
        target.extend(vocab.encode(line))
    target.append(EOS)
    return TrainingExample(input_ids=input_ids, target_ids=target,
                           genre=poem.genre, source_id=poem.source_id)
