"""The five tagger variants and their joint partial-label loss.

``Baseline``   one BiLSTM-CRF over full labels.
``T``          three private BiLSTM-CRFs (decision, segmentation, type) over a
               shared token representation.
``TI``         as T, with the segmentation and type emissions appended to the
               decision head's input.
``TIg``        as TI, with each appended emission multiplied by a sigmoid gate
               computed from the decision BiLSTM state.
``TIgNoCrf``   TIg with per-token softmax heads instead of CRFs.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import crf
from .data import AnnotatedSentence, Availability, Vocabulary
from .encoder import Encoder, EncoderConfig, glorot
from .errors import ConfigError, UsageError
from .labels import (
    O,
    FullLabel,
    LabelSpace,
    Scheme,
    bio2_to_bioes,
    bioes_to_bio2,
    seg_bio2_to_bioes,
    seg_bioes_to_bio2,
)
from .tensor import (
    Parameter,
    Tensor,
    add,
    concat,
    matmul,
    mul,
    no_grad,
    sigmoid,
    take,
    tsum,
)


class ModelVariant(str, enum.Enum):
    BASELINE = "Baseline"
    T = "T"
    TI = "TI"
    TIG = "TIg"
    TIG_NOCRF = "TIgNoCrf"

    @classmethod
    def parse(cls, value) -> "ModelVariant":
        if isinstance(value, cls):
            return value
        for member in cls:
            if str(value).lower() in (member.value.lower(), member.name.lower()):
                return member
        raise ConfigError(f"unknown model variant {value!r}")

    @property
    def modular(self) -> bool:
        return self is not ModelVariant.BASELINE

    @property
    def infuses(self) -> bool:
        return self in (ModelVariant.TI, ModelVariant.TIG, ModelVariant.TIG_NOCRF)

    @property
    def gated(self) -> bool:
        return self in (ModelVariant.TIG, ModelVariant.TIG_NOCRF)

    @property
    def uses_crf(self) -> bool:
        return self is not ModelVariant.TIG_NOCRF


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise ConfigError(f"loss weight {name}={v} must be finite and nonnegative")


@dataclass(frozen=True)
class ModelConfig:
    variant: ModelVariant = ModelVariant.TIG
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    scheme: Scheme = Scheme.BIOES
    weights: LossWeights = field(default_factory=LossWeights)
    constrained_decoding: bool = False
    type_o_target: bool = True


# -- batches ---------------------------------------------------------------------------
@dataclass
class Example:
    """A sentence with its vocabulary ids and training-scheme tag indices precomputed."""

    sentence: AnnotatedSentence
    word_ids: np.ndarray
    chars: list
    dec: np.ndarray | None
    seg: np.ndarray | None
    typ: np.ndarray | None

    @property
    def availability(self) -> Availability:
        return self.sentence.availability


@dataclass
class Batch:
    examples: list
    lengths: np.ndarray
    word_ids: np.ndarray
    char_ids: np.ndarray
    char_lengths: np.ndarray
    token_rows: np.ndarray

    def __len__(self) -> int:
        return len(self.examples)

    def rows(self, pred) -> np.ndarray:
        return np.array([i for i, ex in enumerate(self.examples) if pred(ex)], dtype=np.intp)

    def tags(self, stream: str, rows: np.ndarray) -> np.ndarray:
        t_max = self.word_ids.shape[1]
        out = np.zeros((rows.size, t_max), dtype=np.intp)
        for j, i in enumerate(rows):
            y = getattr(self.examples[i], stream)
            out[j, : y.size] = y
        return out


def make_batch(examples: list) -> Batch:
    if not examples:
        raise UsageError("empty batch")
    lengths = np.array([ex.word_ids.size for ex in examples], dtype=np.intp)
    if np.any(lengths < 1):
        raise UsageError("empty sentence in batch")
    b, t_max = len(examples), int(lengths.max())
    word_ids = np.zeros((b, t_max), dtype=np.intp)
    rows = np.zeros((b, t_max), dtype=np.intp)
    uniq: dict = {}
    for i, ex in enumerate(examples):
        word_ids[i, : ex.word_ids.size] = ex.word_ids
        for t, ch in enumerate(ex.chars):
            rows[i, t] = uniq.setdefault(ch, len(uniq))
    c_max = max(len(ch) for ch in uniq)
    char_ids = np.zeros((len(uniq), c_max), dtype=np.intp)
    char_lengths = np.zeros(len(uniq), dtype=np.intp)
    for ch, r in uniq.items():
        char_ids[r, : len(ch)] = ch
        char_lengths[r] = len(ch)
    return Batch(examples, lengths, word_ids, char_ids, char_lengths, rows)


# -- model ---------------------------------------------------------------------------------
@dataclass
class Outputs:
    """Per-stream emission potentials ``(B, T, K)`` plus the shared token representations."""

    potentials: dict
    embeddings: Tensor
    batch: Batch


class Model:
    def __init__(
        self,
        config: ModelConfig,
        label_space: LabelSpace,
        vocab: Vocabulary,
        seed: int = 0,
        pretrained: np.ndarray | None = None,
    ):
        self.config = config
        self.variant = ModelVariant.parse(config.variant)
        self.vocab = vocab
        self.eval_space = label_space.with_scheme(Scheme.BIO2)
        self.space = label_space.with_scheme(config.scheme)
        rng = np.random.default_rng(seed)
        streams = ("dec", "seg", "typ") if self.variant.modular else ("dec",)
        self.encoder = Encoder(config.encoder, len(vocab.words), len(vocab.chars), streams, rng, pretrained)
        h = self.encoder.out_dim
        self.sizes = {"dec": len(self.space), "seg": self.space.num_seg, "typ": self.space.num_typ}
        self.heads: dict = {}
        self.gates: dict = {}
        self.transitions: dict = {}
        for s in streams:
            k = self.sizes[s]
            fan_in = h
            if s == "dec" and self.variant.infuses:
                fan_in = h + self.sizes["seg"] + self.sizes["typ"]
            self.heads[s] = (Parameter(glorot(rng, fan_in, k), f"head.{s}.w"), Parameter(np.zeros(k), f"head.{s}.b"))
            if self.variant.uses_crf:
                self.transitions[s] = Parameter(crf.init_transitions(k), f"crf.{s}.transitions")
        if self.variant.gated:
            for s in ("seg", "typ"):
                k = self.sizes[s]
                self.gates[s] = (Parameter(glorot(rng, h, k), f"gate.{s}.w"), Parameter(np.zeros(k), f"gate.{s}.b"))
        self.masks = {}
        if config.constrained_decoding:
            self.masks["dec"] = crf.constrained_mask(self.space)
            self.masks["seg"] = crf.seg_constrained_mask(self.space.scheme)

    # -- parameters --------------------------------------------------------------
    def parameter_groups(self) -> dict:
        groups = {"shared": self.encoder.shared_parameters()}
        for s in self.heads:
            group = self.encoder.private[s].parameters() + list(self.heads[s])
            if s in self.transitions:
                group.append(self.transitions[s])
            groups[s] = group
        if self.gates:
            groups["gate"] = [p for pair in self.gates.values() for p in pair]
        return groups

    def parameters(self) -> list:
        return [p for group in self.parameter_groups().values() for p in group]

    def trainable_parameters(self) -> list:
        return [p for p in self.parameters() if p.requires_grad]

    def named_parameters(self) -> dict:
        return {p.name: p for p in self.parameters()}

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def state(self) -> dict:
        return {name: p.data.copy() for name, p in self.named_parameters().items()}

    def load_state(self, state: dict) -> None:
        named = self.named_parameters()
        if set(state) != set(named):
            missing = sorted(set(named) - set(state))
            extra = sorted(set(state) - set(named))
            raise ConfigError(f"state mismatch: missing {missing[:3]}, unexpected {extra[:3]}")
        for name, value in state.items():
            if value.shape != named[name].shape:
                raise ConfigError(f"shape mismatch for {name}: {value.shape} vs {named[name].shape}")
            named[name].data[...] = value

    # -- data preparation ------------------------------------------------------------
    def prepare(self, sentence: AnnotatedSentence) -> Example:
        if len(sentence) == 0:
            raise UsageError(f"sentence {sentence.sid} is empty")
        tokens = sentence.tokens
        if not all(t.indexed for t in tokens):
            raise UsageError(f"sentence {sentence.sid} is not indexed against the vocabulary")
        word_ids = np.array([t.word_id for t in tokens], dtype=np.intp)
        chars = [tuple(t.characters) or (0,) for t in tokens]
        dec = seg = typ = None
        av = sentence.availability
        bioes = self.space.scheme is Scheme.BIOES
        if av is Availability.FULL:
            full = sentence.full_labels()
            full = bio2_to_bioes(full) if bioes else full
            dec = np.array([self.space.full_index(y) for y in full], dtype=np.intp)
        if sentence.has_seg:
            segs = sentence.seg_labels()
            segs = seg_bio2_to_bioes(segs) if bioes else segs
            seg = np.array([self.space.seg_index(s) for s in segs], dtype=np.intp)
        if sentence.has_typ:
            typ = np.array([self.space.typ_index(t) for t in sentence.type_labels()], dtype=np.intp)
        return Example(sentence, word_ids, chars, dec, seg, typ)

    def prepare_all(self, sentences) -> list:
        return [self.prepare(s) for s in sentences]

    # -- forward -------------------------------------------------------------------
    def required_streams(self, batch: Batch, decision: bool | None = None) -> tuple:
        if not self.variant.modular:
            return ("dec",)
        if decision is None:
            decision = any(ex.availability is Availability.FULL for ex in batch.examples)
        w = self.config.weights
        need_seg = w.alpha > 0 and any(ex.sentence.has_seg for ex in batch.examples)
        need_typ = w.beta > 0 and any(ex.sentence.has_typ for ex in batch.examples)
        if decision and self.variant.infuses:
            need_seg = need_typ = True
        streams = (("dec",) if decision else ()) + (("seg",) if need_seg else ()) + (("typ",) if need_typ else ())
        return streams

    def _affine(self, x: Tensor, pair) -> Tensor:
        w, b = pair
        return add(matmul(x, w), b)

    def forward(self, batch: Batch, streams=None, rng=None, perturbation=None) -> Outputs:
        """Emission potentials for the requested streams (default: what the batch's labels need)."""
        if streams is None:
            streams = self.required_streams(batch)
        streams = tuple(streams)
        if self.variant.infuses and "dec" in streams:
            encode = tuple(dict.fromkeys(streams + ("seg", "typ")))
        else:
            encode = streams
        enc = self.encoder.encode(batch, encode, rng, perturbation)
        pots = {}
        for s in ("seg", "typ"):
            if s in enc.hidden:
                pots[s] = self._affine(enc.hidden[s], self.heads[s])
        if "dec" in streams:
            h = enc.hidden["dec"]
            if self.variant.infuses:
                infused = []
                for s in ("seg", "typ"):
                    term = pots[s]
                    if self.variant.gated:
                        term = mul(sigmoid(self._affine(h, self.gates[s])), term)
                    infused.append(term)
                h = concat([h] + infused, axis=2)
            pots["dec"] = self._affine(h, self.heads["dec"])
        return Outputs(pots, enc.embeddings, batch)

    # -- loss ------------------------------------------------------------------------
    def _stream_nll(self, outputs: Outputs, stream: str, rows: np.ndarray) -> Tensor:
        batch = outputs.batch
        em = outputs.potentials[stream]
        if rows.size != len(batch):
            em = take(em, rows)
        lengths = batch.lengths[rows]
        tags = batch.tags(stream, rows)
        if not self.variant.uses_crf:
            return tsum(crf.batch_token_nll(em, tags, lengths))
        allowed = None
        if stream == "typ" and not self.config.type_o_target:
            allowed = np.zeros(em.shape, dtype=bool)
            allowed[np.arange(rows.size)[:, None], np.arange(tags.shape[1])[None, :], tags] = True
            allowed[tags == self.space.typ_index(O)] = True
        return tsum(crf.batch_nll(em, self.transitions[stream], tags, lengths, allowed=allowed))

    def joint_loss(self, outputs: Outputs, weights: LossWeights | None = None) -> Tensor:
        """Batch mean of nll_dec + alpha * nll_seg + beta * nll_typ over available labels."""
        weights = weights or self.config.weights
        batch = outputs.batch
        for ex in batch.examples:
            if ex.availability is Availability.NONE:
                raise UsageError(f"sentence {ex.sentence.sid} has no labels")
            if not self.variant.modular and ex.availability is not Availability.FULL:
                raise ConfigError(f"{self.variant.value} has no head for {ex.availability.value} labels")
        full = batch.rows(lambda ex: ex.availability is Availability.FULL)
        seg = batch.rows(lambda ex: ex.sentence.has_seg)
        typ = batch.rows(lambda ex: ex.sentence.has_typ)
        terms = []
        if full.size:
            terms.append(self._stream_nll(outputs, "dec", full))
        if self.variant.modular:
            for rows, stream, w in ((seg, "seg", weights.alpha), (typ, "typ", weights.beta)):
                if not rows.size or w == 0:
                    continue
                if stream not in outputs.potentials:
                    raise ConfigError(f"outputs lack the {stream} head")
                nll = self._stream_nll(outputs, stream, rows)
                terms.append(nll if w == 1.0 else mul(nll, w))
        total = terms[0]
        for t in terms[1:]:
            total = add(total, t)
        return mul(total, 1.0 / len(batch))

    def loss(self, batch: Batch, rng=None, perturbation=None) -> Tensor:
        return self.joint_loss(self.forward(batch, rng=rng, perturbation=perturbation))

    # -- decoding ---------------------------------------------------------------------
    def _decode(self, em: np.ndarray, stream: str) -> list:
        if not self.variant.uses_crf:
            return [int(i) for i in np.argmax(em, axis=1)]
        path, _ = crf.viterbi_decode(em, self.transitions[stream].data, self.masks.get(stream))
        return path

    def _decode_batches(self, sentences, stream: str, batch_size: int) -> list:
        out = []
        with no_grad():
            for start in range(0, len(sentences), batch_size):
                chunk = sentences[start : start + batch_size]
                examples = [s if isinstance(s, Example) else self.prepare(self.vocab.index_sentence(_unlabeled(s))) for s in chunk]
                batch = make_batch(examples)
                pots = self.forward(batch, streams=(stream,)).potentials[stream].data
                for i, n in enumerate(batch.lengths):
                    out.append(self._decode(pots[i, :n], stream))
        return out

    def predict(self, sentences, batch_size: int = 32) -> list:
        """BIO2 full-label sequences from the decision head."""
        out = []
        for path in self._decode_batches(list(sentences), "dec", batch_size):
            labels = [self.space.full[i] for i in path]
            out.append(bioes_to_bio2(labels) if self.space.scheme is Scheme.BIOES else labels)
        return out

    def predict_partial(self, sentences, head: str, batch_size: int = 32) -> list:
        """Segmentation labels (training scheme) or type labels from a sub-task head."""
        head = {"seg": "seg", "segonly": "seg", "typ": "typ", "typeonly": "typ"}.get(str(head).lower())
        if head is None or not self.variant.modular:
            raise ConfigError(f"{self.variant.value} has no {head or 'such'} head")
        alphabet = self.space.seg_alphabet if head == "seg" else self.space.type_alphabet
        return [[alphabet[i] for i in path] for path in self._decode_batches(list(sentences), head, batch_size)]


def _unlabeled(sentence: AnnotatedSentence) -> AnnotatedSentence:
    if sentence.availability is Availability.NONE:
        return sentence
    return AnnotatedSentence(sentence.tokens, None, Availability.NONE, sentence.sid)


def seg_to_bio2(segs: list) -> list:
    return seg_bioes_to_bio2(segs)


def build_model(config: ModelConfig, label_space: LabelSpace, vocab: Vocabulary, seed: int = 0, embeddings=None) -> Model:
    """Construct a model, seeding word vectors from an embedding table when one is given."""
    pretrained = None
    if embeddings is not None:
        if embeddings.dimension != config.encoder.word_embed_dim:
            raise ConfigError(
                f"embedding dimension {embeddings.dimension} != word_embed_dim {config.encoder.word_embed_dim}"
            )
        rng = np.random.default_rng(seed + 7919)
        bound = np.sqrt(3.0 / embeddings.dimension)
        pretrained = rng.uniform(-bound, bound, size=(len(vocab.words), embeddings.dimension))
        for word, idx in vocab.words.items():
            if word in embeddings.vectors:
                pretrained[idx] = embeddings.vectors[word]
        pretrained[1] = embeddings.oov
    return Model(config, label_space, vocab, seed, pretrained)
