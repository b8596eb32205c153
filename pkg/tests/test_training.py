import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from modcrf.data import Availability, Corpus, SynthSpec, Vocabulary, generate_synthetic_corpus
from modcrf.encoder import EncoderConfig
from modcrf.errors import ConfigError
from modcrf.models import Model, ModelConfig, ModelVariant, make_batch
from modcrf.tensor import Parameter, no_grad
from modcrf.training import (
    Decision,
    EarlyStopState,
    OptimizerState,
    TrainConfig,
    adversarial_loss,
    adversarial_perturbation,
    clip_gradients,
    early_stop_check,
    evaluate_full,
    lr_at_epoch,
    sgd_momentum_step,
    train,
)
from modcrf.verify import randomize_parameters, tiny_model

SMALL = EncoderConfig(4, 3, 6, 5)


# -- recipe pieces --------------------------------------------------------------------------
@pytest.mark.parametrize("epoch,expected", [(0, 0.01), (1, 0.01 / 1.05), (10, 0.01 / 1.5), (20, 0.005)])
def test_learning_rate_schedule(epoch, expected):
    assert lr_at_epoch(0.01, 0.05, epoch) == pytest.approx(expected, rel=1e-15)


def test_learning_rate_rejects_negative_epoch():
    with pytest.raises(ConfigError):
        lr_at_epoch(0.01, 0.05, -1)


@settings(max_examples=50)
@given(st.integers(0, 500), st.integers(0, 500))
def test_learning_rate_is_monotone(a, b):
    lo, hi = sorted((a, b))
    assert lr_at_epoch(0.01, 0.05, hi) <= lr_at_epoch(0.01, 0.05, lo)


def test_elementwise_clipping():
    p = Parameter(np.zeros(4), "p")
    p.grad = np.array([-9.0, -1.0, 2.0, 7.5])
    clip_gradients([p], 5.0)
    np.testing.assert_array_equal(p.grad, [-5.0, -1.0, 2.0, 5.0])


def test_momentum_update_by_hand():
    p = Parameter(np.array([1.0, -np.inf]), "p")
    state = OptimizerState(0.9)
    p.grad = np.array([2.0, 3.0])
    sgd_momentum_step(state, [p], 0.1)
    assert p.data[0] == pytest.approx(1.0 - 0.1 * 2.0)
    assert p.grad is None
    p.grad = np.array([1.0, 1.0])
    sgd_momentum_step(state, [p], 0.1)
    assert p.data[0] == pytest.approx(0.8 - 0.1 * (0.9 * 2.0 + 1.0))
    assert p.data[1] == -np.inf
    sgd_momentum_step(state, [p], 0.1)  # no gradient: velocity keeps coasting
    assert p.data[0] == pytest.approx(0.52 - 0.1 * 0.9 * 2.8)


def test_train_config_validation():
    for bad in (dict(lr=0), dict(momentum=1.0), dict(batch_size=0), dict(clip=0), dict(patience=0),
                dict(adversarial=True, epsilon=0.0), dict(adversarial_mode="l1")):
        with pytest.raises(ConfigError):
            TrainConfig(**bad).validate()


def test_early_stopping_rules():
    state = EarlyStopState(patience=3, min_epochs=6)
    curve = [0.1, 0.5, 0.4, 0.4, 0.4, 0.4, 0.4, 0.6, 0.5, 0.5, 0.5]
    decisions = [early_stop_check(state, e, f) for e, f in enumerate(curve, start=1)]
    # epochs 5 and 6 exceed patience but fall below the minimum; epoch 6 is the minimum itself
    assert decisions[:5] == [Decision.CONTINUE] * 5
    assert decisions[5] is Decision.STOP
    state = EarlyStopState(patience=3, min_epochs=0)
    assert [early_stop_check(state, e, f).value for e, f in enumerate([0.2, 0.2, 0.2, 0.2], 1)] == [
        "Continue", "Continue", "Continue", "Stop"
    ]
    assert state.best_epoch == 1


# -- adversarial training ------------------------------------------------------------------------
def adversarial_setup(variant="TIg"):
    model, corpus = tiny_model(variant)
    randomize_parameters(model, 6)
    return model, make_batch(model.prepare_all(corpus))


@pytest.mark.parametrize("variant", ["Baseline", "TIg"])
def test_zero_epsilon_adversarial_term_equals_clean_loss(variant):
    model, batch = adversarial_setup(variant)
    with no_grad():
        clean = model.loss(batch, rng=np.random.default_rng(5)).item()
    total = adversarial_loss(model, batch, 0.0, dropout_seed=5).item()
    assert total == 2 * clean


def test_perturbation_has_norm_epsilon():
    model, batch = adversarial_setup()
    _, delta = adversarial_perturbation(model, batch, 0.05, dropout_seed=1)
    assert abs(np.sqrt(np.sum(delta**2)) - 0.05) <= 1e-12
    _, delta = adversarial_perturbation(model, batch, 0.05, mode="sign")
    assert set(np.unique(np.abs(delta))) <= {0.0, 0.05}


def test_small_perturbation_does_not_lower_the_loss():
    model, batch = adversarial_setup()
    clean, delta = adversarial_perturbation(model, batch, 1e-4, dropout_seed=3)
    with no_grad():
        perturbed = model.loss(batch, rng=np.random.default_rng(3), perturbation=delta).item()
        downhill = model.loss(batch, rng=np.random.default_rng(3), perturbation=-delta).item()
    assert perturbed >= clean.item()
    assert downhill <= clean.item()


# -- loop ---------------------------------------------------------------------------------------
def synthetic_split(n_train=30, seed=0):
    corpus = generate_synthetic_corpus(SynthSpec(n_sentences=n_train + 10), seed)
    return corpus.subset(range(n_train)), corpus.subset(range(n_train, n_train + 10))


def small_model(variant, train_corpus, dev, seed=0):
    vocab = Vocabulary.build([train_corpus, dev])
    return Model(ModelConfig(ModelVariant.parse(variant), SMALL), train_corpus.label_space, vocab, seed)


def test_training_logs_every_epoch_and_restores_best():
    tr, dv = synthetic_split()
    model = small_model("TIg", tr, dv)
    seen = []
    result = train(model, tr, dv, TrainConfig(max_epochs=4, min_epochs=0), seen.append)
    assert [r.epoch for r in result.history] == [1, 2, 3, 4] == [r.epoch for r in seen]
    assert result.best_dev_f1 == max(result.dev_curve)
    assert result.dev_curve[result.best_epoch - 1] == result.best_dev_f1
    assert evaluate_full(model, model.vocab.index(dv)).f1 == pytest.approx(result.best_dev_f1)
    assert result.log_text().count("\n") == 4


def test_training_is_deterministic_under_a_seed():
    tr, dv = synthetic_split()
    runs = []
    for _ in range(2):
        model = small_model("T", tr, dv)
        res = train(model, tr, dv, TrainConfig(max_epochs=2, min_epochs=0, seed=3))
        runs.append(([r.loss for r in res.history], model.state()))
    assert runs[0][0] == runs[1][0]
    assert all(np.array_equal(runs[0][1][k], runs[1][1][k]) for k in runs[0][1])


def test_early_stop_ends_training():
    tr, dv = synthetic_split(10)
    model = small_model("Baseline", tr, dv)
    result = train(model, tr, dv, TrainConfig(max_epochs=50, min_epochs=0, patience=1, lr=1e-9))
    assert result.stopped_early and len(result.history) < 50


def test_adversarial_training_runs():
    tr, dv = synthetic_split(10)
    model = small_model("TIg", tr, dv)
    result = train(model, tr, dv, TrainConfig(max_epochs=1, min_epochs=0, adversarial=True))
    assert np.isfinite(result.history[0].loss)


def test_partial_training_data():
    tr, dv = synthetic_split(20)
    mixed = Corpus(tuple(s.project(Availability.SEG) if i % 2 else s for i, s in enumerate(tr)), tr.label_space)
    model = small_model("TI", mixed, dv)
    train(model, mixed, dv, TrainConfig(max_epochs=1, min_epochs=0))
    base = small_model("Baseline", mixed, dv)
    with pytest.raises(ConfigError):
        train(base, mixed, dv, TrainConfig(max_epochs=1))
    with pytest.raises(ConfigError):
        train(model, mixed, mixed, TrainConfig(max_epochs=1))
    unl = Corpus((tr[0].project(Availability.NONE),), tr.label_space)
    with pytest.raises(ConfigError):
        train(model, unl, dv, TrainConfig(max_epochs=1))
    with pytest.raises(ConfigError):
        train(model, tr.subset([]), dv, TrainConfig(max_epochs=1))
