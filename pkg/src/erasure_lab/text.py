"""Sentence-level synthetic task with an input-level concept intervention.

The main label says whether a sentence contains a numbered word (sentences
are 10 uniform draws from either the numbered or the plain word list). The
concept is sentence length: when present, the token "pad" is appended
exactly 10 times. Because the concept is realized purely by the pad block,
toggling it on or off is a well-defined input intervention, and the mean
absolute change it causes in a classifier's prediction probability
(delta_prob) measures exactly how much that classifier leans on the
concept.

Encoding is a bag of word vectors: the sum of per-token embeddings from a
seeded Gaussian table (unit variance per coordinate, default dimension
100). Same seed, same table.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit

from .latent import group_sizes

NUMBERED_WORDS = (
    "one", "two", "three", "four", "five", "six", "seven", "eight", "nine",
    "ten", "eleven", "twelve", "thirteen", "fourteen", "fifteen", "sixteen",
    "seventeen", "eighteen", "twenty", "thirty", "forty", "fifty", "sixty",
    "seventy", "eighty", "ninety", "hundred", "thousand",
)

# "switch" appears twice; the list is sampled as written.
PLAIN_WORDS = (
    "nice", "device", "try", "picture", "signature", "trailer", "harry",
    "potter", "malfoy", "john", "switch", "taste", "glove", "balloon", "dog",
    "horse", "switch", "watch", "sun", "cloud", "river", "town", "cow",
    "shadow", "pencil", "eraser",
)

PAD_WORD = "pad"
PAD_REPEAT = 10


@dataclass(frozen=True)
class Vocab:
    numbered_words: tuple = NUMBERED_WORDS
    plain_words: tuple = PLAIN_WORDS
    pad_word: str = PAD_WORD

    def all_words(self):
        return tuple(sorted(set(self.numbered_words) | set(self.plain_words) | {self.pad_word}))


DEFAULT_VOCAB = Vocab()


@dataclass(frozen=True)
class Sentence:
    tokens: tuple
    has_number: bool
    has_pad: bool


def sentence_from_tokens(tokens, vocab=DEFAULT_VOCAB) -> Sentence:
    """Build a Sentence with flags recomputed from the tokens."""
    tokens = tuple(tokens)
    numbered = set(vocab.numbered_words)
    n_pad = sum(1 for t in tokens if t == vocab.pad_word)
    if n_pad not in (0, PAD_REPEAT):
        raise ValueError(f"pad token must occur 0 or {PAD_REPEAT} times, got {n_pad}")
    return Sentence(
        tokens=tokens,
        has_number=any(t in numbered for t in tokens),
        has_pad=n_pad == PAD_REPEAT,
    )


def gen_sentence(has_number, has_pad, length=10, rng=None, seed=None, vocab=DEFAULT_VOCAB) -> Sentence:
    """Sample `length` words uniformly (with replacement) from one list.

    Numbered sentences draw from the numbered list, plain ones from the
    plain list, so the main flag is true by construction. The pad block is
    appended when has_pad.
    """
    if length < 1:
        raise ValueError("length must be at least 1")
    if rng is None:
        rng = np.random.default_rng(seed)
    pool = vocab.numbered_words if has_number else vocab.plain_words
    idx = rng.integers(0, len(pool), size=length)
    tokens = tuple(pool[i] for i in idx)
    if has_pad:
        tokens = tokens + (vocab.pad_word,) * PAD_REPEAT
    return Sentence(tokens=tokens, has_number=bool(has_number), has_pad=bool(has_pad))


@dataclass(frozen=True)
class TextCorpus:
    sentences: tuple
    y_main: np.ndarray
    y_concept: np.ndarray
    seed: int

    @property
    def n(self):
        return len(self.sentences)

    def subset(self, idx):
        idx = np.asarray(idx)
        return TextCorpus(
            sentences=tuple(self.sentences[i] for i in idx),
            y_main=self.y_main[idx],
            y_concept=self.y_concept[idx],
            seed=self.seed,
        )


def gen_corpus(n, kappa, seed, p_number=0.5, length=10, vocab=DEFAULT_VOCAB) -> TextCorpus:
    """Corpus whose (has_number, has_pad) flags realize correlation kappa.

    Group sizes follow the same integer split as the latent generator;
    p_number sets the marginal rate of numbered sentences.
    """
    n_pp, n_mm, n_pm, n_mp = group_sizes(n, kappa, p_pos=p_number)
    flags = (
        [(True, True)] * n_pp
        + [(False, False)] * n_mm
        + [(True, False)] * n_pm
        + [(False, True)] * n_mp
    )
    ss = np.random.SeedSequence(seed)
    word_seed, shuffle_seed = ss.spawn(2)
    rng = np.random.default_rng(word_seed)
    order = np.random.default_rng(shuffle_seed).permutation(n)
    flags = [flags[i] for i in order]
    sentences = tuple(
        gen_sentence(num, pad, length=length, rng=rng, vocab=vocab) for num, pad in flags
    )
    y_main = np.array([1.0 if s.has_number else -1.0 for s in sentences])
    y_concept = np.array([1.0 if s.has_pad else -1.0 for s in sentences])
    return TextCorpus(sentences=sentences, y_main=y_main, y_concept=y_concept, seed=seed)


@dataclass(frozen=True)
class EmbeddingTable:
    dim: int
    words: tuple
    vectors: np.ndarray
    seed: int

    @classmethod
    def build(cls, vocab=DEFAULT_VOCAB, dim=100, seed=0):
        words = vocab.all_words()
        rng = np.random.default_rng(seed)
        vectors = rng.normal(0.0, 1.0, (len(words), dim))
        return cls(dim=dim, words=words, vectors=vectors, seed=seed)

    def __getitem__(self, word):
        try:
            return self.vectors[self.words.index(word)]
        except ValueError:
            raise KeyError(f"word not in embedding table: {word!r}") from None

    def index(self):
        return {w: i for i, w in enumerate(self.words)}


def encode_nbow(sentence: Sentence, table: EmbeddingTable):
    """Sum of token embeddings; the empty sentence encodes to zero."""
    out = np.zeros(table.dim)
    index = table.index()
    for tok in sentence.tokens:
        if tok not in index:
            raise KeyError(f"word not in embedding table: {tok!r}")
        out += table.vectors[index[tok]]
    return out


@dataclass(frozen=True)
class EncodedCorpus:
    """Bag-of-vectors view of a corpus; quacks like a dataset for metrics."""

    points: np.ndarray
    y_main: np.ndarray
    y_concept: np.ndarray
    sentences: tuple
    table: EmbeddingTable

    @property
    def n(self):
        return self.points.shape[0]

    def subset(self, idx):
        idx = np.asarray(idx)
        return EncodedCorpus(
            points=self.points[idx],
            y_main=self.y_main[idx],
            y_concept=self.y_concept[idx],
            sentences=tuple(self.sentences[i] for i in idx),
            table=self.table,
        )


def encode_corpus(corpus: TextCorpus, table: EmbeddingTable) -> EncodedCorpus:
    index = table.index()
    points = np.zeros((corpus.n, table.dim))
    for row, sentence in enumerate(corpus.sentences):
        for tok in sentence.tokens:
            if tok not in index:
                raise KeyError(f"word not in embedding table: {tok!r}")
            points[row] += table.vectors[index[tok]]
    return EncodedCorpus(
        points=points,
        y_main=corpus.y_main.copy(),
        y_concept=corpus.y_concept.copy(),
        sentences=corpus.sentences,
        table=table,
    )


def intervene_concept(sentence: Sentence, add: bool) -> Sentence:
    """Add or remove the pad block, leaving content tokens untouched.

    Removal strips every pad token; addition appends the block at the end.
    For sentences built by this module the two operations are exact
    inverses of each other.
    """
    if add and not sentence.has_pad:
        return replace(
            sentence,
            tokens=sentence.tokens + (PAD_WORD,) * PAD_REPEAT,
            has_pad=True,
        )
    if not add and sentence.has_pad:
        return replace(
            sentence,
            tokens=tuple(t for t in sentence.tokens if t != PAD_WORD),
            has_pad=False,
        )
    return sentence


def delta_prob_scores(score_fn, sentences, table: EmbeddingTable):
    """Mean |sigmoid(score after toggling the pad block) - sigmoid(score)|.

    The toggle direction is per sentence: pads are removed where present
    and added where absent. score_fn maps an n x dim matrix to n scores.
    """
    sentences = tuple(sentences)
    if not sentences:
        raise ValueError("empty corpus")
    base = np.stack([encode_nbow(s, table) for s in sentences])
    pad_vec = table[PAD_WORD] * PAD_REPEAT
    signs = np.array([-1.0 if s.has_pad else 1.0 for s in sentences])
    toggled = base + signs[:, None] * pad_vec
    p0 = expit(np.asarray(score_fn(base), dtype=float))
    p1 = expit(np.asarray(score_fn(toggled), dtype=float))
    return float(np.mean(np.abs(p1 - p0)))


def delta_prob(clf, sentences, table: EmbeddingTable):
    return delta_prob_scores(clf.score, sentences, table)


def save_corpus(corpus: TextCorpus, path):
    """Sentences file (one per line) plus labels CSV at <path>.labels.csv."""
    path = str(path)
    with open(path, "w", encoding="utf-8") as fh:
        for s in corpus.sentences:
            fh.write(" ".join(s.tokens) + "\n")
    with open(path + ".labels.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["idx", "y_main", "y_concept"])
        for i in range(corpus.n):
            writer.writerow([i, int(corpus.y_main[i]), int(corpus.y_concept[i])])


def load_corpus(path, vocab=DEFAULT_VOCAB) -> TextCorpus:
    path = str(path)
    with open(path, encoding="utf-8") as fh:
        sentences = tuple(sentence_from_tokens(line.split(), vocab) for line in fh if line.strip())
    y_main = np.array([1.0 if s.has_number else -1.0 for s in sentences])
    y_concept = np.array([1.0 if s.has_pad else -1.0 for s in sentences])
    return TextCorpus(sentences=sentences, y_main=y_main, y_concept=y_concept, seed=-1)


def save_table(table: EmbeddingTable, path):
    with open(str(path), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["word"] + [f"v{i}" for i in range(table.dim)])
        for word, vec in zip(table.words, table.vectors):
            writer.writerow([word] + [repr(float(v)) for v in vec])


def load_table(path) -> EmbeddingTable:
    with open(str(path), newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    words = tuple(r[0] for r in rows[1:])
    vectors = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    return EmbeddingTable(dim=vectors.shape[1], words=words, vectors=vectors, seed=-1)
