"""Composite tags, their segmentation/type projections and tagging schemes.

A full label is rendered ``"O"`` or ``"<seg>-<type>"`` (``"B-positive"``).
Segmentation labels are bare prefixes (``B``/``I``/``O`` in BIO2, plus
``E``/``S`` in BIOES); type labels are drawn from a task alphabet plus ``O``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

from .errors import ConfigError, ConsistencyError, ParseError, ValidationError

O = "O"
SEP = "-"


class Scheme(str, enum.Enum):
    BIO2 = "BIO2"
    BIOES = "BIOES"

    @classmethod
    def parse(cls, value) -> "Scheme":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise ConfigError(f"unknown tagging scheme {value!r}") from None


SEG_ALPHABETS = {
    Scheme.BIO2: (O, "B", "I"),
    Scheme.BIOES: (O, "B", "I", "E", "S"),
}


class _Missing:
    """Stands in for an absent projection of a partially labeled token."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "MISSING"


MISSING = _Missing()


class FullLabel(NamedTuple):
    seg: str
    typ: str

    def __str__(self) -> str:
        return O if self.seg == O else f"{self.seg}{SEP}{self.typ}"

    @property
    def is_outside(self) -> bool:
        return self.seg == O

    @classmethod
    def parse(cls, text: str) -> "FullLabel":
        if text == O:
            return OUTSIDE
        seg, sep, typ = text.partition(SEP)
        if not sep or not typ or seg not in SEG_ALPHABETS[Scheme.BIOES] or seg == O:
            raise ParseError(f"cannot parse label {text!r}")
        return cls(seg, typ)


OUTSIDE = FullLabel(O, O)


def decompose(y) -> tuple:
    """Split a full label into its (segmentation, type) projections."""
    if isinstance(y, str):
        y = FullLabel.parse(y)
    return y.seg, y.typ


def compose(seg: str, typ: str) -> FullLabel:
    if (seg == O) != (typ == O):
        raise ConsistencyError(f"cannot compose segment {seg!r} with type {typ!r}")
    if seg not in SEG_ALPHABETS[Scheme.BIOES]:
        raise ConsistencyError(f"unknown segmentation label {seg!r}")
    return OUTSIDE if seg == O else FullLabel(seg, typ)


def _as_labels(seq) -> list:
    return [FullLabel.parse(y) if isinstance(y, str) else y for y in seq]


@dataclass(frozen=True)
class Violation:
    position: int
    message: str

    def __str__(self) -> str:
        return f"position {self.position}: {self.message}"


def validate_sequence(seq, scheme) -> list:
    """Return violations of the scheme's well-formedness rules (empty when well formed)."""
    scheme = Scheme.parse(scheme)
    seq = _as_labels(seq)
    alphabet = SEG_ALPHABETS[scheme]
    out = []
    prev = OUTSIDE
    for t, y in enumerate(seq):
        if y.seg not in alphabet:
            out.append(Violation(t, f"{y.seg!r} is not in the {scheme.value} alphabet"))
            prev = y
            continue
        if scheme is Scheme.BIO2:
            if y.seg == "I" and (prev.seg not in ("B", "I") or prev.typ != y.typ):
                if prev.seg in ("B", "I"):
                    out.append(Violation(t, f"type mismatch: {prev} followed by {y}"))
                else:
                    out.append(Violation(t, f"I without preceding B/I of type {y.typ!r}"))
        else:
            open_span = prev.seg in ("B", "I")
            if y.seg in ("I", "E"):
                if not open_span:
                    out.append(Violation(t, f"{y.seg} without an open span"))
                elif prev.typ != y.typ:
                    out.append(Violation(t, f"type mismatch: {prev} followed by {y}"))
            elif open_span:
                out.append(Violation(t, f"span opened by {prev} is not closed by E"))
        prev = y
    if scheme is Scheme.BIOES and prev.seg in ("B", "I"):
        out.append(Violation(len(seq), f"span opened by {prev} is not closed at end of sequence"))
    return out


def bio2_to_bioes(seq) -> list:
    """Rewrite a well-formed BIO2 sequence in BIOES (singletons to S, span-final I to E)."""
    seq = _as_labels(seq)
    problems = validate_sequence(seq, Scheme.BIO2)
    if problems:
        raise ValidationError("invalid BIO2 sequence: " + "; ".join(map(str, problems)), problems)
    out = []
    for t, y in enumerate(seq):
        if y.seg == O:
            out.append(y)
            continue
        continues = t + 1 < len(seq) and seq[t + 1].seg == "I"
        if y.seg == "B":
            out.append(FullLabel("B" if continues else "S", y.typ))
        else:
            out.append(FullLabel("I" if continues else "E", y.typ))
    return out


_TO_BIO2 = {"S": "B", "E": "I", "B": "B", "I": "I"}


def bioes_to_bio2(seq) -> list:
    """Total mapping S->B, E->I; no other repair."""
    out = []
    for y in _as_labels(seq):
        out.append(y if y.seg == O else FullLabel(_TO_BIO2.get(y.seg, y.seg), y.typ))
    return out


def seg_bio2_to_bioes(segs: Sequence[str]) -> list:
    """BIO2 -> BIOES for bare segmentation sequences (no type information)."""
    out = []
    for t, s in enumerate(segs):
        if s == O:
            out.append(O)
            continue
        if s not in ("B", "I") or (s == "I" and (t == 0 or segs[t - 1] == O)):
            raise ValidationError(f"invalid BIO2 segmentation at position {t}: {s!r}", [Violation(t, s)])
        continues = t + 1 < len(segs) and segs[t + 1] == "I"
        out.append(("B" if continues else "S") if s == "B" else ("I" if continues else "E"))
    return out


def seg_bioes_to_bio2(segs: Sequence[str]) -> list:
    return [_TO_BIO2.get(s, s) for s in segs]


@dataclass(frozen=True)
class LabelSpace:
    scheme: Scheme
    types: tuple
    full: tuple = field(init=False)
    seg_alphabet: tuple = field(init=False)
    type_alphabet: tuple = field(init=False)

    def __post_init__(self):
        segs = SEG_ALPHABETS[self.scheme]
        object.__setattr__(self, "seg_alphabet", segs)
        object.__setattr__(self, "type_alphabet", (O,) + tuple(self.types))
        full = [OUTSIDE] + [FullLabel(s, t) for s in segs if s != O for t in self.types]
        object.__setattr__(self, "full", tuple(full))
        object.__setattr__(self, "_full_index", {y: i for i, y in enumerate(full)})
        object.__setattr__(self, "_seg_index", {s: i for i, s in enumerate(segs)})
        object.__setattr__(self, "_typ_index", {t: i for i, t in enumerate(self.type_alphabet)})

    def __len__(self) -> int:
        return len(self.full)

    @property
    def num_seg(self) -> int:
        return len(self.seg_alphabet)

    @property
    def num_typ(self) -> int:
        return len(self.type_alphabet)

    def full_index(self, y) -> int:
        if isinstance(y, str):
            y = FullLabel.parse(y)
        try:
            return self._full_index[y]
        except KeyError:
            raise ParseError(f"label {y} not in {self.scheme.value} label space") from None

    def seg_index(self, s: str) -> int:
        try:
            return self._seg_index[s]
        except KeyError:
            raise ParseError(f"segmentation label {s!r} not in {self.scheme.value}") from None

    def typ_index(self, t: str) -> int:
        try:
            return self._typ_index[t]
        except KeyError:
            raise ParseError(f"type label {t!r} not in {self.type_alphabet}") from None

    def with_scheme(self, scheme) -> "LabelSpace":
        return LabelSpace(Scheme.parse(scheme), self.types)

    def contains(self, y) -> bool:
        return y in self._full_index


def build_label_space(scheme, types: Sequence[str]) -> LabelSpace:
    types = tuple(types)
    if not types:
        raise ConfigError("type alphabet is empty")
    if len(set(types)) != len(types):
        raise ConfigError(f"duplicate types in {types}")
    for t in types:
        if t == O or not t or any(c.isspace() for c in t):
            raise ConfigError(f"invalid type name {t!r}")
    return LabelSpace(Scheme.parse(scheme), types)
