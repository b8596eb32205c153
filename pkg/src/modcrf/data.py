"""Corpora, vocabularies, embeddings, fold splits and the synthetic generator.

Corpora are stored in BIO2. A sentence's labels are ``FullLabel`` pairs; for
partially labeled sentences the absent projection holds ``MISSING`` and is
never read (``seg_labels``/``type_labels`` refuse to hand it out).
"""
from __future__ import annotations

import enum
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, ParseError, UsageError, ValidationError
from .labels import (
    MISSING,
    O,
    OUTSIDE,
    SEG_ALPHABETS,
    FullLabel,
    LabelSpace,
    Scheme,
    Violation,
    build_label_space,
    validate_sequence,
)

PAD_ID = 0
OOV_ID = 1
PAD_CHAR = "\x00"


class Availability(str, enum.Enum):
    FULL = "Full"
    SEG = "SegOnly"
    TYPE = "TypeOnly"
    NONE = "Unlabeled"

    @classmethod
    def parse(cls, value) -> "Availability":
        if isinstance(value, cls):
            return value
        for member in cls:
            if str(value).lower() in (member.value.lower(), member.name.lower()):
                return member
        raise ConfigError(f"unknown availability {value!r}")


@dataclass(frozen=True)
class Token:
    surface: str
    characters: tuple = ()
    word_id: int | None = None

    @property
    def indexed(self) -> bool:
        return self.word_id is not None


@dataclass(frozen=True)
class AnnotatedSentence:
    tokens: tuple
    labels: tuple | None = None
    availability: Availability = Availability.FULL
    sid: int = -1

    def __post_init__(self):
        if self.labels is not None and len(self.labels) != len(self.tokens):
            raise ValidationError(f"{len(self.labels)} labels for {len(self.tokens)} tokens")
        if self.labels is None and self.availability is not Availability.NONE:
            raise ValidationError(f"{self.availability.value} sentence without labels")

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def words(self) -> list:
        return [t.surface for t in self.tokens]

    @property
    def has_seg(self) -> bool:
        return self.availability in (Availability.FULL, Availability.SEG)

    @property
    def has_typ(self) -> bool:
        return self.availability in (Availability.FULL, Availability.TYPE)

    def full_labels(self) -> list:
        if self.availability is not Availability.FULL:
            raise UsageError(f"sentence {self.sid} is {self.availability.value}, not fully labeled")
        return list(self.labels)

    def seg_labels(self) -> list:
        if not self.has_seg:
            raise UsageError(f"sentence {self.sid} has no segmentation labels")
        return [y.seg for y in self.labels]

    def type_labels(self) -> list:
        if not self.has_typ:
            raise UsageError(f"sentence {self.sid} has no type labels")
        return [y.typ for y in self.labels]

    def rendered_labels(self) -> list:
        """Label column text: full tags, bare seg tags or bare types by availability."""
        if self.availability is Availability.FULL:
            return [str(y) for y in self.labels]
        if self.availability is Availability.SEG:
            return self.seg_labels()
        if self.availability is Availability.TYPE:
            return self.type_labels()
        return []

    def project(self, keep: Availability) -> "AnnotatedSentence":
        """Drop one projection of a fully labeled sentence."""
        labels = self.full_labels()
        if keep is Availability.SEG:
            new = tuple(FullLabel(y.seg, MISSING) for y in labels)
        elif keep is Availability.TYPE:
            new = tuple(FullLabel(MISSING, y.typ) for y in labels)
        elif keep is Availability.FULL:
            return self
        else:
            return replace(self, labels=None, availability=Availability.NONE)
        return replace(self, labels=new, availability=keep)


@dataclass(frozen=True)
class Corpus:
    sentences: tuple
    label_space: LabelSpace
    provenance: str = ""

    def __post_init__(self):
        object.__setattr__(self, "sentences", tuple(self.sentences))

    def __len__(self) -> int:
        return len(self.sentences)

    def __iter__(self):
        return iter(self.sentences)

    def __getitem__(self, i):
        return self.sentences[i]

    def subset(self, indices: Iterable[int], provenance: str | None = None) -> "Corpus":
        return Corpus(
            tuple(self.sentences[i] for i in indices),
            self.label_space,
            self.provenance if provenance is None else provenance,
        )

    def __add__(self, other: "Corpus") -> "Corpus":
        if other.label_space.types != self.label_space.types:
            raise ConfigError("cannot merge corpora over different type alphabets")
        return Corpus(self.sentences + other.sentences, self.label_space, f"{self.provenance}+{other.provenance}")

    def availability_counts(self) -> Counter:
        return Counter(s.availability for s in self.sentences)

    @property
    def fully_labeled(self) -> bool:
        return all(s.availability is Availability.FULL for s in self.sentences)


# -- CoNLL reading/writing ---------------------------------------------------------
def _infer_availability(labels: list, label_space: LabelSpace) -> Availability:
    def all_in(pred):
        return all(pred(lab) for lab, _ in labels)

    def is_full(lab):
        if lab == O:
            return True
        try:
            y = FullLabel.parse(lab)
        except ParseError:
            return False
        return y.typ in label_space.types

    seg_alpha = set(SEG_ALPHABETS[Scheme.BIO2])
    typ_alpha = set(label_space.type_alphabet)
    candidates = []
    if all_in(is_full):
        candidates.append(Availability.FULL)
    if all_in(lambda lab: lab in seg_alpha):
        candidates.append(Availability.SEG)
    if all_in(lambda lab: lab in typ_alpha):
        candidates.append(Availability.TYPE)
    if not candidates:
        for lab, line in labels:
            if not (is_full(lab) or lab in seg_alpha or lab in typ_alpha):
                raise ParseError(f"unknown label {lab!r}", line)
        bad = next(line for lab, line in labels if not is_full(lab))
        raise ParseError("file mixes full, segmentation-only and type-only labels", bad)
    if len(candidates) > 1 and Availability.FULL not in candidates:
        raise ConfigError(
            f"label alphabet is ambiguous between {[c.value for c in candidates]}; pass availability explicitly"
        )
    return candidates[0]


def _make_labels(raw: list, availability: Availability) -> tuple:
    if availability is Availability.FULL:
        return tuple(FullLabel.parse(lab) for lab in raw)
    if availability is Availability.SEG:
        return tuple(FullLabel(lab, MISSING) for lab in raw)
    return tuple(FullLabel(MISSING, lab) for lab in raw)


def _validate_partial(raw: list, availability: Availability) -> list:
    if availability is not Availability.SEG:
        return []
    out = []
    for t, s in enumerate(raw):
        if s == "I" and (t == 0 or raw[t - 1] == O):
            out.append(Violation(t, "I without preceding B/I"))
    return out


def read_conll(path, label_space: LabelSpace, availability=None, provenance: str | None = None) -> Corpus:
    """Read blank-line separated token-per-line text; the label is the last column.

    Availability is inferred from the label alphabet unless given.
    """
    path = Path(path)
    blocks, current = [], []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped:
                if current:
                    blocks.append(current)
                    current = []
                continue
            if stripped.startswith("-DOCSTART-"):
                continue
            current.append((stripped.split(), lineno))
    if current:
        blocks.append(current)

    widths = {len(cols) for block in blocks for cols, _ in block}
    labeled = bool(widths) and min(widths) >= 2
    if widths and not labeled and max(widths) >= 2:
        line = next(ln for block in blocks for cols, ln in block if len(cols) == 1)
        raise ParseError("missing label column", line)

    if availability is not None:
        availability = Availability.parse(availability)
    elif not labeled:
        availability = Availability.NONE
    elif blocks:
        availability = _infer_availability([(cols[-1], ln) for b in blocks for cols, ln in b], label_space)

    sentences = []
    for sid, block in enumerate(blocks):
        tokens = tuple(Token(cols[0]) for cols, _ in block)
        first_line = block[0][1]
        if availability is Availability.NONE:
            sentences.append(AnnotatedSentence(tokens, None, Availability.NONE, sid))
            continue
        if not labeled:
            raise ParseError("labels required but file has a single column", first_line)
        raw = [cols[-1] for cols, _ in block]
        try:
            labels = _make_labels(raw, availability)
        except ParseError as exc:
            raise ParseError(str(exc), first_line) from None
        if availability is Availability.FULL:
            problems = validate_sequence(labels, label_space.scheme)
            bad = [y for y in labels if not label_space.contains(y)]
            if bad:
                raise ParseError(f"label {bad[0]} not in label space", first_line)
        else:
            problems = _validate_partial(raw, availability)
        if problems:
            raise ValidationError(
                f"sentence starting at line {first_line}: " + "; ".join(map(str, problems)), problems
            )
        sentences.append(AnnotatedSentence(tokens, labels, availability, sid))
    return Corpus(tuple(sentences), label_space, provenance or str(path))


def write_conll(corpus: Corpus, path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for sent in corpus:
            cols = sent.rendered_labels()
            for i, tok in enumerate(sent.tokens):
                fh.write(f"{tok.surface} {cols[i]}\n" if cols else f"{tok.surface}\n")
            fh.write("\n")


def strip_indexing(corpus: Corpus) -> Corpus:
    sents = [replace(s, tokens=tuple(Token(t.surface) for t in s.tokens)) for s in corpus]
    return Corpus(tuple(sents), corpus.label_space, corpus.provenance)


# -- embeddings and vocabulary -------------------------------------------------------
def oov_bound(dimension: int) -> float:
    return math.sqrt(3.0 / dimension)


@dataclass
class EmbeddingTable:
    dimension: int
    vectors: dict
    oov: np.ndarray

    def __contains__(self, word: str) -> bool:
        return word.lower() in self.vectors

    def lookup(self, word: str) -> np.ndarray:
        return self.vectors.get(word.lower(), self.oov)


def load_embeddings(path, dimension: int, seed: int = 0) -> EmbeddingTable:
    """Text embeddings: word followed by ``dimension`` reals on each line."""
    if dimension < 1:
        raise ConfigError("embedding dimension must be positive")
    vectors = {}
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split(" ")
            parts = [p for p in parts if p]
            if not parts:
                continue
            if len(parts) != dimension + 1:
                raise ParseError(f"expected {dimension + 1} columns, found {len(parts)}", lineno)
            try:
                vec = np.array([float(v) for v in parts[1:]])
            except ValueError:
                raise ParseError("non-numeric embedding value", lineno) from None
            vectors.setdefault(parts[0].lower(), vec)
    rng = np.random.default_rng(seed)
    bound = oov_bound(dimension)
    return EmbeddingTable(dimension, vectors, rng.uniform(-bound, bound, size=dimension))


@dataclass
class Vocabulary:
    words: dict = field(default_factory=lambda: {"<pad>": PAD_ID, "<unk>": OOV_ID})
    chars: dict = field(default_factory=lambda: {PAD_CHAR: PAD_ID, "<unk>": OOV_ID})

    @classmethod
    def build(cls, corpora: Iterable[Corpus], embeddings: EmbeddingTable | None = None) -> "Vocabulary":
        vocab = cls()
        for corpus in corpora:
            for sent in corpus:
                for tok in sent.tokens:
                    vocab._add_word(tok.surface.lower())
                    for ch in tok.surface:
                        vocab.chars.setdefault(ch, len(vocab.chars))
        if embeddings is not None:
            for word in sorted(embeddings.vectors):
                vocab._add_word(word)
        return vocab

    def _add_word(self, word: str) -> None:
        self.words.setdefault(word, len(self.words))

    def word_id(self, surface: str) -> int:
        return self.words.get(surface.lower(), OOV_ID)

    def char_ids(self, surface: str) -> tuple:
        if not surface:
            return (PAD_ID,)
        return tuple(self.chars.get(ch, OOV_ID) for ch in surface)

    def index_sentence(self, sent: AnnotatedSentence) -> AnnotatedSentence:
        toks = tuple(Token(t.surface, self.char_ids(t.surface), self.word_id(t.surface)) for t in sent.tokens)
        return replace(sent, tokens=toks)

    def index(self, corpus: Corpus) -> Corpus:
        return Corpus(tuple(self.index_sentence(s) for s in corpus), corpus.label_space, corpus.provenance)

    def to_lines(self) -> list:
        inv_w = sorted(self.words.items(), key=lambda kv: kv[1])
        inv_c = sorted(self.chars.items(), key=lambda kv: kv[1])
        return [f"w\t{w}" for w, _ in inv_w] + [f"c\t{ord(c)}" for c, _ in inv_c if c != "<unk>"]

    @classmethod
    def from_lines(cls, lines: Iterable[str]) -> "Vocabulary":
        vocab = cls(words={}, chars={})
        for line in lines:
            kind, _, value = line.rstrip("\n").partition("\t")
            if kind == "w":
                vocab.words[value] = len(vocab.words)
            elif kind == "c":
                vocab.chars[chr(int(value))] = len(vocab.chars)
                if len(vocab.chars) == 1:
                    vocab.chars["<unk>"] = OOV_ID
        return vocab


# -- fold splitting and partial projections --------------------------------------------
def split_folds(corpus: Corpus, k: int = 10, seed: int = 0, dev_fraction: float = 0.1) -> list:
    """k (train, dev, test) triples; each test fold is one part, dev is a fraction of the rest."""
    if k < 2:
        raise ConfigError("need at least 2 folds")
    if len(corpus) < k:
        raise ConfigError(f"corpus of {len(corpus)} sentences is too small for {k} folds")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(corpus))
    parts = np.array_split(order, k)
    folds = []
    for i in range(k):
        rest = np.concatenate([p for j, p in enumerate(parts) if j != i])
        rest = rng.permutation(rest)
        n_dev = int(round(dev_fraction * rest.size))
        folds.append(
            (
                corpus.subset(sorted(rest[n_dev:]), f"{corpus.provenance}#fold{i}/train"),
                corpus.subset(sorted(rest[:n_dev]), f"{corpus.provenance}#fold{i}/dev"),
                corpus.subset(sorted(parts[i]), f"{corpus.provenance}#fold{i}/test"),
            )
        )
    return folds


def split_partial(corpus: Corpus, keep, fraction: float, seed: int = 0) -> tuple:
    """Pick ``fraction`` of sentences, project them to one sub-task; return (partial, untouched rest)."""
    keep = Availability.parse(keep)
    if keep not in (Availability.SEG, Availability.TYPE):
        raise ConfigError("keep must be SegOnly or TypeOnly")
    if not 0.0 <= fraction <= 1.0:
        raise ConfigError(f"fraction {fraction} outside [0, 1]")
    if not corpus.fully_labeled:
        raise ConfigError("project_partial needs a fully labeled corpus")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(corpus))
    n = int(round(fraction * len(corpus)))
    chosen = sorted(order[:n].tolist())
    rest = sorted(order[n:].tolist())
    partial = Corpus(
        tuple(corpus[i].project(keep) for i in chosen), corpus.label_space, f"{corpus.provenance}#{keep.value}"
    )
    return partial, corpus.subset(rest)


def project_partial(corpus: Corpus, keep, fraction: float, seed: int = 0, keep_rest: bool = False) -> Corpus:
    partial, rest = split_partial(corpus, keep, fraction, seed)
    return partial + rest if keep_rest else partial


# -- synthetic corpora ---------------------------------------------------------------
OPEN_BRACKET = "["
CLOSE_BRACKET = "]"


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of a learnable-by-construction tagging corpus.

    Spans are maximal runs of entity-lexicon words; each span is immediately
    followed (after an optional closing bracket) by a trigger word whose
    lexicon determines the span's type. Entity, filler and trigger words are
    drawn from the same random syllable generator, so surface form carries no
    signal beyond lexicon membership.
    """

    n_sentences: int = 300
    types: tuple = ("positive", "neutral", "negative")
    filler_range: tuple = (3, 8)
    spans_range: tuple = (1, 2)
    span_length_range: tuple = (1, 3)
    entity_lexicon: int = 40
    filler_lexicon: int = 60
    triggers_per_type: int = 3
    bracket_prob: float = 0.0
    entity_zipf: float = 0.0
    lexicon_seed: int = 0

    def validate(self) -> None:
        lo, hi = self.filler_range
        if not 0 <= lo <= hi:
            raise ConfigError(f"bad filler_range {self.filler_range}")
        lo, hi = self.spans_range
        if not 0 <= lo <= hi:
            raise ConfigError(f"bad spans_range {self.spans_range}")
        lo, hi = self.span_length_range
        if not 1 <= lo <= hi:
            raise ConfigError(f"bad span_length_range {self.span_length_range}")
        if self.spans_range[1] > 0 and self.entity_lexicon < 1:
            raise ConfigError("spans requested but entity lexicon is empty")
        if self.filler_range[1] > 0 and self.filler_lexicon < 1:
            raise ConfigError("filler words requested but filler lexicon is empty")
        if self.triggers_per_type < 1 or not self.types:
            raise ConfigError("every type needs at least one trigger word")
        if not 0.0 <= self.bracket_prob <= 1.0:
            raise ConfigError("bracket_prob must lie in [0, 1]")
        if self.n_sentences < 0:
            raise ConfigError("n_sentences must be nonnegative")
        build_label_space(Scheme.BIO2, self.types)


_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"


@dataclass(frozen=True)
class SynthLexicon:
    entities: tuple
    fillers: tuple
    triggers: dict  # type -> tuple of words

    def trigger_type(self, word: str):
        for typ, words in self.triggers.items():
            if word in words:
                return typ
        return None


def make_lexicon(spec: SynthSpec) -> SynthLexicon:
    rng = np.random.default_rng(spec.lexicon_seed)
    total = spec.entity_lexicon + spec.filler_lexicon + spec.triggers_per_type * len(spec.types)
    seen, words = set(), []
    while len(words) < total:
        n_syll = int(rng.integers(2, 4))
        w = "".join(rng.choice(list(_CONSONANTS)) + rng.choice(list(_VOWELS)) for _ in range(n_syll))
        if w not in seen:
            seen.add(w)
            words.append(w)
    e, f = spec.entity_lexicon, spec.filler_lexicon
    triggers, pos = {}, e + f
    for typ in spec.types:
        triggers[typ] = tuple(words[pos : pos + spec.triggers_per_type])
        pos += spec.triggers_per_type
    return SynthLexicon(tuple(words[:e]), tuple(words[e : e + f]), triggers)


def _entity_probs(spec: SynthSpec) -> np.ndarray | None:
    if spec.entity_zipf <= 0:
        return None
    ranks = np.arange(1, spec.entity_lexicon + 1, dtype=float)
    p = ranks ** (-spec.entity_zipf)
    return p / p.sum()


def generate_synthetic_corpus(spec: SynthSpec, seed: int = 0) -> Corpus:
    spec.validate()
    lex = make_lexicon(spec)
    space = build_label_space(Scheme.BIO2, spec.types)
    rng = np.random.default_rng(seed)
    probs = _entity_probs(spec)
    sentences = []
    for sid in range(spec.n_sentences):
        n_spans = int(rng.integers(spec.spans_range[0], spec.spans_range[1] + 1))
        n_filler = int(rng.integers(spec.filler_range[0], spec.filler_range[1] + 1))
        cuts = np.sort(rng.integers(0, n_filler + 1, size=n_spans))
        gaps = np.diff(np.concatenate([[0], cuts, [n_filler]]))
        words, labels = [], []

        def filler(n):
            for _ in range(n):
                words.append(str(rng.choice(lex.fillers)))
                labels.append(OUTSIDE)

        filler(int(gaps[0]))
        for j in range(n_spans):
            typ = spec.types[int(rng.integers(len(spec.types)))]
            length = int(rng.integers(spec.span_length_range[0], spec.span_length_range[1] + 1))
            bracket = rng.random() < spec.bracket_prob
            if bracket:
                words.append(OPEN_BRACKET)
                labels.append(OUTSIDE)
            for i in range(length):
                idx = int(rng.choice(spec.entity_lexicon, p=probs))
                words.append(lex.entities[idx])
                labels.append(FullLabel("B" if i == 0 else "I", typ))
            if bracket:
                words.append(CLOSE_BRACKET)
                labels.append(OUTSIDE)
            trig = lex.triggers[typ]
            words.append(trig[int(rng.integers(len(trig)))])
            labels.append(OUTSIDE)
            filler(int(gaps[j + 1]))
        if not words:
            filler(1)
        sentences.append(
            AnnotatedSentence(tuple(Token(w) for w in words), tuple(labels), Availability.FULL, sid)
        )
    return Corpus(tuple(sentences), space, f"synthetic(seed={seed})")


def rule_based_tag(words: Sequence[str], lexicon: SynthLexicon) -> list:
    """Reference tagger that recovers synthetic gold labels from the lexicon alone."""
    ents = set(lexicon.entities)
    out = [OUTSIDE] * len(words)
    t = 0
    while t < len(words):
        if words[t] not in ents:
            t += 1
            continue
        end = t
        while end + 1 < len(words) and words[end + 1] in ents:
            end += 1
        nxt = end + 1
        if nxt < len(words) and words[nxt] == CLOSE_BRACKET:
            nxt += 1
        typ = lexicon.trigger_type(words[nxt]) if nxt < len(words) else None
        if typ is not None:
            for i in range(t, end + 1):
                out[i] = FullLabel("B" if i == t else "I", typ)
        t = end + 1
    return out


def scan_types(paths) -> tuple:
    """Sorted type names found in the label columns of CoNLL files (full or bare type labels)."""
    found = set()
    bare_seg = set(SEG_ALPHABETS[Scheme.BIOES])
    for path in paths:
        with Path(path).open(encoding="utf-8") as fh:
            for line in fh:
                cols = line.split()
                if len(cols) < 2 or cols[0].startswith("-DOCSTART-"):
                    continue
                label = cols[-1]
                seg, sep, typ = label.partition("-")
                if sep and seg in bare_seg and typ:
                    found.add(typ)
                elif label not in bare_seg:
                    found.add(label)
    return tuple(sorted(found))
