"""Oracle suite behind ``modcrf verify``; the helpers double as test fixtures."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import crf
from .data import AnnotatedSentence, Availability, Corpus, Token, Vocabulary
from .encoder import EncoderConfig
from .gradcheck import grad_check
from .labels import (
    OUTSIDE,
    FullLabel,
    Scheme,
    bio2_to_bioes,
    bioes_to_bio2,
    build_label_space,
    compose,
    decompose,
)
from .models import Model, ModelConfig, ModelVariant, make_batch
from .tensor import backward, no_grad
from .training import OptimizerState, clip_gradients, sgd_momentum_step

TINY_ENCODER = EncoderConfig(char_embed_dim=3, char_hidden=2, word_embed_dim=4, word_hidden=3, dropout_rate=0.5)
TINY_TYPES = ("pos", "neg")


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}\t{self.name}\t{self.detail}\t{self.seconds:.1f}s"


# -- fixtures -----------------------------------------------------------------------------
def random_potentials(rng: np.random.Generator, length: int, k: int, scale: float = 2.0) -> crf.CrfPotentials:
    trans = crf.init_transitions(k)
    trans[: k + 1, :k] = rng.normal(0, scale, size=(k + 1, k))
    trans[:k, k + 1] = rng.normal(0, scale, size=k)
    return crf.CrfPotentials(rng.normal(0, scale, size=(length, k)), trans)


def tiny_corpus() -> Corpus:
    """Three-token sentences over two types, one per availability kind."""
    space = build_label_space(Scheme.BIO2, TINY_TYPES)
    words = (("good", "Coffee", "shop"), ("the", "bad", "Service"), ("Tea", "is", "fine"))
    full = (
        (OUTSIDE, FullLabel("B", "pos"), FullLabel("I", "pos")),
        (OUTSIDE, OUTSIDE, FullLabel("B", "neg")),
        (FullLabel("B", "pos"), OUTSIDE, OUTSIDE),
    )
    sents = [AnnotatedSentence(tuple(Token(w) for w in ws), ys, Availability.FULL, i) for i, (ws, ys) in enumerate(zip(words, full))]
    return Corpus(tuple(sents), space, "tiny")


def tiny_model(variant, seed: int = 0, encoder: EncoderConfig = TINY_ENCODER, **kwargs) -> tuple:
    corpus = tiny_corpus()
    vocab = Vocabulary.build([corpus])
    model = Model(ModelConfig(ModelVariant.parse(variant), encoder, **kwargs), corpus.label_space, vocab, seed)
    return model, vocab.index(corpus)


def randomize_parameters(model: Model, seed: int, scale: float = 0.5) -> None:
    """Replace every finite parameter entry with a random value (so nothing sits at an init special case)."""
    rng = np.random.default_rng(seed)
    for p in model.parameters():
        finite = np.isfinite(p.data)
        p.data[finite] = rng.normal(0, scale, size=int(finite.sum()))


def random_bio2_sequence(rng: np.random.Generator, length: int, types) -> list:
    out = []
    while len(out) < length:
        if rng.random() < 0.4:
            out.append(OUTSIDE)
            continue
        typ = types[int(rng.integers(len(types)))]
        span = int(rng.integers(1, 4))
        for i in range(min(span, length - len(out))):
            out.append(FullLabel("B" if i == 0 else "I", typ))
    return out


# -- checks -----------------------------------------------------------------------------------
def check_crf_oracle(n: int = 200, seed: int = 0, tol: float = 1e-10) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst_z = worst_v = 0.0
    path_mismatch = 0
    for _ in range(n):
        pot = random_potentials(rng, int(rng.integers(1, 7)), int(rng.integers(1, 5)))
        with no_grad():
            z = crf.log_partition(pot).item()
        worst_z = max(worst_z, abs(z - crf.brute_force_log_partition(pot)))
        path, score = crf.viterbi(pot)
        bpath, bscore = crf.brute_force_viterbi(pot)
        worst_v = max(worst_v, abs(score - bscore))
        path_mismatch += list(path) != list(bpath)
    ok = worst_z <= tol and worst_v <= tol and path_mismatch == 0
    return CheckResult(
        "crf-oracle", ok, f"{n} instances, max |dlogZ|={worst_z:.1e}, max |dscore|={worst_v:.1e}, path mismatches={path_mismatch}"
    )


def check_gradients(variants=tuple(ModelVariant), tol: float = 1e-4, seed: int = 0, step: float = 1e-4) -> CheckResult:
    worst = []
    for variant in variants:
        model, corpus = tiny_model(variant, seed)
        randomize_parameters(model, seed + 1)
        batch = make_batch(model.prepare_all(corpus))
        report = grad_check(lambda: model.loss(batch), model.parameters(), step=step, tol=tol)
        name, err = report.worst
        worst.append((ModelVariant.parse(variant).value, report.passed, name, err))
    ok = all(p for _, p, _, _ in worst)
    detail = ", ".join(f"{v}:{e:.1e}" for v, _, _, e in worst)
    return CheckResult("gradients", ok, f"max relative error per variant {detail}")


def check_label_roundtrips(n: int = 1000, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    types = ("pos", "neg", "neu", "mix")
    failures = 0
    for _ in range(n):
        seq = random_bio2_sequence(rng, int(rng.integers(1, 12)), types)
        if any(compose(*decompose(y)) != y for y in seq):
            failures += 1
            continue
        bioes = bio2_to_bioes(seq)
        if bioes_to_bio2(bioes) != seq or bio2_to_bioes(bioes_to_bio2(bioes)) != bioes:
            failures += 1
    count = len(build_label_space(Scheme.BIOES, types))
    ok = failures == 0 and count == 17
    return CheckResult("label-algebra", ok, f"{n} sequences, {failures} failures, |BIOES x 4 types|={count}")


PARTIAL_UNTOUCHED = {
    Availability.SEG: ("typ", "gate", "dec"),
    Availability.TYPE: ("seg", "gate", "dec"),
}


def masking_changes(variant, keep: Availability, seed: int = 0) -> list:
    """Names of parameters outside the trained sub-task that one partial-label step modified."""
    model, corpus = tiny_model(variant, seed)
    partial = [s.project(keep) for s in corpus]
    batch = make_batch(model.prepare_all(partial))
    groups = model.parameter_groups()
    watched = [p for g in PARTIAL_UNTOUCHED[keep] for p in groups.get(g, [])]
    before = [p.data.copy() for p in watched]
    params = model.trainable_parameters()
    loss = model.loss(batch, rng=np.random.default_rng(seed))
    backward(loss)
    clip_gradients(params, 5.0)
    sgd_momentum_step(OptimizerState(0.9), params, 0.01)
    return [p.name for p, b in zip(watched, before) if not np.array_equal(p.data, b)]


def check_masking(seed: int = 0) -> CheckResult:
    changed = []
    for variant in (ModelVariant.T, ModelVariant.TI, ModelVariant.TIG, ModelVariant.TIG_NOCRF):
        for keep in (Availability.SEG, Availability.TYPE):
            changed += [f"{variant.value}/{keep.value}:{n}" for n in masking_changes(variant, keep, seed)]
    return CheckResult("partial-masking", not changed, "no foreign parameter moved" if not changed else ", ".join(changed[:5]))


def gate_saturation_gap(bias: float = 30.0, seed: int = 0) -> float:
    """Max |decision potential difference| between TIg with saturated gates and TI sharing its weights."""
    gated, corpus = tiny_model(ModelVariant.TIG, seed)
    plain, _ = tiny_model(ModelVariant.TI, seed)
    randomize_parameters(gated, seed + 3)
    shared = plain.named_parameters()
    for name, p in gated.named_parameters().items():
        if name in shared:
            shared[name].data[...] = p.data
    for w, b in gated.gates.values():
        b.data[...] = bias
    batch = make_batch(gated.prepare_all(corpus))
    with no_grad():
        a = gated.forward(batch, streams=("dec",)).potentials["dec"].data
        b = plain.forward(batch, streams=("dec",)).potentials["dec"].data
    return float(np.max(np.abs(a - b)))


def check_gate_saturation(tol: float = 1e-9) -> CheckResult:
    gap = gate_saturation_gap()
    return CheckResult("gate-saturation", gap <= tol, f"max |TIg - TI| = {gap:.1e} at gate bias +30")


def run_verification() -> list:
    checks = (check_crf_oracle, check_gradients, check_label_roundtrips, check_masking, check_gate_saturation)
    results = []
    for check in checks:
        started = time.perf_counter()
        try:
            res = check()
        except Exception as exc:  # a crashing oracle is a failed oracle
            res = CheckResult(check.__name__.replace("check_", ""), False, f"{type(exc).__name__}: {exc}")
        res.seconds = time.perf_counter() - started
        results.append(res)
    return results
