"""Word/phoneme vocabularies, encoding and lexicon-based phonemization."""

import re
from collections import Counter
from dataclasses import dataclass, field

from .errors import FormatError, InvalidInput, MissingPronunciation

PAD, UNK, BOS, EOS, MASK = 0, 1, 2, 3, 4
RESERVED = ("<pad>", "<unk>", "<s>", "</s>", "<mask>")
LEVELS = ("word", "phoneme")

_PUNCT = re.compile(r"[^\w\s']")


def normalize_word(word):
    """Lower-case and strip punctuation, keeping apostrophes."""
    return _PUNCT.sub("", word.lower())


class Vocabulary:
    """Bijective token <-> id map with fixed reserved ids."""

    def __init__(self, tokens, level="word"):
        tokens = list(tokens)
        if level not in LEVELS:
            raise InvalidInput(f"unknown level {level!r}")
        if tuple(tokens[: len(RESERVED)]) != RESERVED:
            raise InvalidInput("vocabulary must start with the reserved tokens")
        if len(set(tokens)) != len(tokens):
            raise InvalidInput("vocabulary tokens must be unique")
        self.level = level
        self.tokens = tuple(tokens)
        self._ids = {tok: i for i, tok in enumerate(self.tokens)}

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self._ids

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.tokens == other.tokens and self.level == other.level

    def id(self, token):
        return self._ids.get(token, UNK)

    def token(self, idx):
        return self.tokens[idx]

    @property
    def content_ids(self):
        return range(len(RESERVED), len(self.tokens))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self.tokens:
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path, level="word"):
        with open(path, encoding="utf-8") as fh:
            tokens = [line.rstrip("\n") for line in fh]
        while tokens and tokens[-1] == "":
            tokens.pop()
        try:
            return cls(tokens, level)
        except InvalidInput as exc:
            raise FormatError(f"{path}: {exc}") from exc


@dataclass(frozen=True)
class TokenSequence:
    ids: tuple
    level: str = "word"

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(int(i) for i in self.ids))

    def __len__(self):
        return len(self.ids)

    def __iter__(self):
        return iter(self.ids)


def _tokenize(text, level):
    if level == "word":
        return [w for w in (normalize_word(t) for t in text.split()) if w]
    return text.split()


def build_vocab(corpus, level="word", max_size=10000):
    """Reserved tokens followed by the most frequent tokens (ties lexicographic)."""
    corpus = list(corpus)
    if not corpus:
        raise InvalidInput("cannot build a vocabulary from an empty corpus")
    if max_size < len(RESERVED) + 1:
        raise InvalidInput(f"max_size must be at least {len(RESERVED) + 1}")
    counts = Counter(tok for line in corpus for tok in _tokenize(line, level))
    for tok in RESERVED:
        counts.pop(tok, None)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    kept = [tok for tok, _ in ranked[: max_size - len(RESERVED)]]
    return Vocabulary(list(RESERVED) + kept, level)


def encode(text, vocab):
    return TokenSequence([vocab.id(tok) for tok in _tokenize(text, vocab.level)], vocab.level)


def decode(seq, vocab):
    return " ".join(vocab.token(i) for i in seq.ids)


@dataclass(frozen=True)
class Lexicon:
    """Lower-cased word -> phoneme list, one pronunciation per word."""

    entries: dict = field(default_factory=dict)

    def __contains__(self, word):
        return normalize_word(word) in self.entries

    def lookup(self, word):
        try:
            return self.entries[normalize_word(word)]
        except KeyError:
            raise MissingPronunciation(word) from None

    @classmethod
    def load(cls, path):
        entries = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line.strip():
                    continue
                if "\t" not in line:
                    raise FormatError(f"{path}:{lineno}: expected word<TAB>phonemes")
                word, phones = line.split("\t", 1)
                # first pronunciation wins
                entries.setdefault(normalize_word(word), tuple(phones.split()))
        return cls(entries)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for word, phones in self.entries.items():
                fh.write(f"{word}\t{' '.join(phones)}\n")

    def phoneme_vocab(self):
        symbols = sorted({p for phones in self.entries.values() for p in phones})
        return Vocabulary(list(RESERVED) + symbols, "phoneme")


def phonemize(words, lex, word_vocab, phone_vocab):
    """Map a word-level sequence to the concatenated phoneme sequence."""
    out = []
    for idx in words.ids:
        word = word_vocab.token(idx)
        if idx in (PAD, UNK, BOS, EOS, MASK):
            raise MissingPronunciation(word)
        for ph in lex.lookup(word):
            if ph not in phone_vocab:
                raise InvalidInput(f"phoneme {ph!r} of {word!r} is not in the phoneme vocabulary")
            out.append(phone_vocab.id(ph))
    return TokenSequence(out, "phoneme")


def phonemize_text(text, lex):
    """Transcript string to a space-separated phoneme string."""
    return " ".join(ph for w in text.split() if normalize_word(w) for ph in lex.lookup(w))
