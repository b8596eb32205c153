"""Weak-supervision protocols: knowledge integration, partial-label curves, domain transfer.

Each protocol trains a modular system and a fully supervised Baseline per
(grid fraction, seed) and reports test F1 of full prediction.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from .config import RunConfig
from .data import Availability, Corpus, Vocabulary, split_partial
from .errors import ConfigError
from .evaluation import epochs_to_fraction
from .models import Model, ModelVariant
from .training import evaluate_full, train


class Protocol(str, enum.Enum):
    KNOWLEDGE_INTEGRATION = "KnowledgeIntegration"
    PARTIAL_CURVE = "PartialCurve"
    DOMAIN_TRANSFER = "DomainTransfer"

    @classmethod
    def parse(cls, value) -> "Protocol":
        if isinstance(value, cls):
            return value
        for member in cls:
            if str(value).lower() in (member.value.lower(), member.name.lower()):
                return member
        raise ConfigError(f"unknown protocol {value!r}")


@dataclass(frozen=True)
class ExperimentSpec:
    protocol: Protocol = Protocol.PARTIAL_CURVE
    grid: tuple = (0.0, 0.2, 0.4, 0.6, 0.8)
    partial: str = "SegOnly"
    seeds: tuple = (0, 1, 2, 3, 4)
    full_fraction: float = 0.2

    def validate(self) -> None:
        if not self.grid:
            raise ConfigError("experiment grid is empty")
        if not self.seeds:
            raise ConfigError("no seeds given")
        for f in tuple(self.grid) + (self.full_fraction,):
            if not 0.0 <= f <= 1.0:
                raise ConfigError(f"fraction {f} outside [0, 1]")
        if Availability.parse(self.partial) not in (Availability.SEG, Availability.TYPE):
            raise ConfigError("partial kind must be SegOnly or TypeOnly")
        if self.protocol is Protocol.PARTIAL_CURVE and max(self.grid) > 1.0 - self.full_fraction + 1e-12:
            raise ConfigError(
                f"partial fraction {max(self.grid)} exceeds the {1 - self.full_fraction:.2f} left after full labels"
            )


@dataclass(frozen=True)
class ExperimentRow:
    fraction: float
    seed: int
    system: str
    f1: float
    epochs: int
    n_full: int
    n_partial: int
    dev_curve: tuple = field(default=(), compare=False)

    def line(self) -> str:
        return f"{self.fraction:g}\t{self.seed}\t{self.system}\t{self.f1:.4f}\t{self.epochs}\t{self.n_full}\t{self.n_partial}"


HEADER = "fraction\tseed\tsystem\tf1\tepochs\tn_full\tn_partial"


def run_system(config: RunConfig, variant, train_corpus: Corpus, dev: Corpus, test: Corpus, vocab: Vocabulary, seed: int):
    """Train one model and return (test F1, training result)."""
    cfg = replace(config, variant=ModelVariant.parse(variant).value, seed=seed)
    model = Model(cfg.model_config(), train_corpus.label_space, vocab, seed)
    result = train(model, train_corpus, dev, cfg.train_config())
    return evaluate_full(model, vocab.index(test)).f1, result


def _row(fraction, seed, system, f1, result, corpus: Corpus) -> ExperimentRow:
    counts = corpus.availability_counts()
    n_full = counts.get(Availability.FULL, 0)
    return ExperimentRow(fraction, seed, system, f1, len(result.history), n_full, len(corpus) - n_full, tuple(result.dev_curve))


def knowledge_integration(spec: ExperimentSpec, config: RunConfig, train_pool: Corpus, dev: Corpus, test: Corpus) -> list:
    """Three disjoint thirds: SegOnly, TypeOnly and Full (subsampled to each grid fraction)."""
    rows = []
    vocab = Vocabulary.build([train_pool, dev, test])
    for seed in spec.seeds:
        order = np.random.default_rng(seed).permutation(len(train_pool))
        thirds = np.array_split(order, 3)
        seg = Corpus(tuple(train_pool[i].project(Availability.SEG) for i in thirds[0]), train_pool.label_space)
        typ = Corpus(tuple(train_pool[i].project(Availability.TYPE) for i in thirds[1]), train_pool.label_space)
        full_fold = thirds[2]
        for fraction in spec.grid:
            n = int(round(fraction * full_fold.size))
            if n < 1:
                raise ConfigError(f"fraction {fraction} leaves no fully labeled sentence")
            full = train_pool.subset(sorted(full_fold[:n].tolist()))
            modular_data = seg + typ + full
            f1, res = run_system(config, config.variant, modular_data, dev, test, vocab, seed)
            rows.append(_row(fraction, seed, config.variant, f1, res, modular_data))
            f1, res = run_system(config, ModelVariant.BASELINE, full, dev, test, vocab, seed)
            rows.append(_row(fraction, seed, ModelVariant.BASELINE.value, f1, res, full))
    return rows


def partial_curve(
    spec: ExperimentSpec,
    config: RunConfig,
    train_pool: Corpus,
    dev: Corpus,
    test: Corpus,
    partial_source: Corpus | None = None,
) -> list:
    """Fixed fully labeled share; partial labels added per grid fraction of the training pool.

    With ``partial_source`` (domain transfer) partial labels come from that
    corpus instead of the remainder of the training pool.
    """
    rows = []
    corpora = [train_pool, dev, test] + ([partial_source] if partial_source is not None else [])
    vocab = Vocabulary.build(corpora)
    keep = Availability.parse(spec.partial)
    n_pool = len(train_pool)
    n_full = int(round(spec.full_fraction * n_pool))
    if n_full < 1:
        raise ConfigError("full_fraction leaves no fully labeled sentence")
    for seed in spec.seeds:
        order = np.random.default_rng(seed).permutation(n_pool)
        full = train_pool.subset(sorted(order[:n_full].tolist()))
        source = partial_source if partial_source is not None else train_pool.subset(sorted(order[n_full:].tolist()))
        baseline = None
        for fraction in spec.grid:
            n_part = int(round(fraction * n_pool))
            if n_part > len(source):
                raise ConfigError(f"fraction {fraction} needs {n_part} partial sentences, only {len(source)} available")
            partial, _ = split_partial(source, keep, n_part / len(source) if len(source) else 0.0, seed)
            data = full + partial
            f1, res = run_system(config, config.variant, data, dev, test, vocab, seed)
            rows.append(_row(fraction, seed, config.variant, f1, res, data))
            if baseline is None:
                baseline = run_system(config, ModelVariant.BASELINE, full, dev, test, vocab, seed)
            f1, res = baseline
            rows.append(_row(fraction, seed, ModelVariant.BASELINE.value, f1, res, full))
    return rows


def domain_transfer(spec: ExperimentSpec, config: RunConfig, train_pool: Corpus, dev: Corpus, test: Corpus, source: Corpus) -> list:
    spec = replace(spec, partial=Availability.TYPE.value)
    return partial_curve(spec, config, train_pool, dev, test, partial_source=source)


def run_experiment(spec: ExperimentSpec, config: RunConfig, train_pool, dev, test, source=None) -> list:
    spec.validate()
    if not train_pool.fully_labeled:
        raise ConfigError("experiments need a fully labeled source corpus")
    if spec.protocol is Protocol.KNOWLEDGE_INTEGRATION:
        return knowledge_integration(spec, config, train_pool, dev, test)
    if spec.protocol is Protocol.DOMAIN_TRANSFER:
        if source is None:
            raise ConfigError("domain transfer needs an out-of-domain corpus")
        return domain_transfer(spec, config, train_pool, dev, test, source)
    return partial_curve(spec, config, train_pool, dev, test)


def median_f1(rows, system: str, fraction: float) -> float:
    vals = [r.f1 for r in rows if r.system == system and abs(r.fraction - fraction) < 1e-12]
    if not vals:
        raise ConfigError(f"no rows for {system} at {fraction}")
    return float(np.median(vals))


def convergence_curves(config: RunConfig, variants, train_corpus: Corpus, dev: Corpus, seeds) -> dict:
    """Per-variant list of (seed, dev-F1 curve, epochs to 90% of best dev F1)."""
    vocab = Vocabulary.build([train_corpus, dev])
    out = {}
    for variant in variants:
        variant = ModelVariant.parse(variant).value
        runs = []
        for seed in seeds:
            cfg = replace(config, variant=variant, seed=seed)
            model = Model(cfg.model_config(), train_corpus.label_space, vocab, seed)
            result = train(model, train_corpus, dev, cfg.train_config())
            runs.append((seed, result.dev_curve, epochs_to_fraction(result.dev_curve, 0.9)))
        out[variant] = runs
    return out


def format_rows(rows) -> str:
    return "\n".join([HEADER] + [r.line() for r in rows]) + "\n"
