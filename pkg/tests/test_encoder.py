import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from modcrf.encoder import (
    Encoder,
    EncoderConfig,
    char_encode,
    char_encode_batch,
    highway,
    init_bilstm,
    init_highway,
    init_lstm,
    lstm_step,
    reverse_index,
    reverse_within_length,
    run_bilstm,
    run_lstm,
    run_lstm_composed,
)
from modcrf.errors import ConfigError, DimensionError, UsageError
from modcrf.gradcheck import grad_check
from modcrf.data import Token
from modcrf.models import make_batch
from modcrf.tensor import Parameter, Tensor, backward, mul, no_grad, tsum
from modcrf.verify import tiny_model


def sig(x):
    return 1.0 / (1.0 + np.exp(-x))


def numpy_lstm(params, x):
    """Plain per-step reference for one unbatched sequence."""
    hd = params.hidden
    h, c = np.zeros(hd), np.zeros(hd)
    out = []
    for x_t in x:
        z = x_t @ params.w_input.data + h @ params.w_hidden.data + params.bias.data
        i, f, o, g = sig(z[:hd]), sig(z[hd : 2 * hd]), sig(z[2 * hd : 3 * hd]), np.tanh(z[3 * hd :])
        c = f * c + i * g
        h = o * np.tanh(c)
        out.append(h)
    return np.array(out)


def random_case(seed, b=3, t=5, d=4, hd=3):
    rng = np.random.default_rng(seed)
    params = init_lstm(rng, d, hd, "l")
    for p in params.parameters():
        p.data[...] = rng.normal(0, 0.7, size=p.shape)
    x = rng.normal(size=(b, t, d))
    lengths = rng.integers(1, t + 1, size=b)
    return params, x, lengths


# -- LSTM ---------------------------------------------------------------------------------
def test_forget_bias_starts_at_one():
    params = init_lstm(np.random.default_rng(0), 4, 3, "l")
    np.testing.assert_array_equal(params.bias.data, [0, 0, 0, 1, 1, 1, 0, 0, 0, 0, 0, 0])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_lstm_matches_numpy_reference(seed):
    params, x, lengths = random_case(seed)
    with no_grad():
        out = run_lstm(params, x, lengths).data
    for i, n in enumerate(lengths):
        np.testing.assert_allclose(out[i, :n], numpy_lstm(params, x[i, :n]), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_fused_and_composed_passes_agree(seed):
    params, x, lengths = random_case(seed)
    weights = np.random.default_rng(seed + 1).normal(size=(3, 5, 3))
    valid = (np.arange(5)[None, :] < lengths[:, None])[:, :, None]
    grads = []
    for run in (run_lstm, run_lstm_composed):
        for p in params.parameters():
            p.grad = None
        inputs = Parameter(x.copy(), "x")
        out = run(params, inputs, lengths)
        backward(tsum(mul(out, weights * valid)))
        # a weight that never entered the graph (e.g. recurrence when every length is 1) has no grad
        grads.append([g if g is not None else np.zeros(v.shape) for g, v in
                      zip([inputs.grad] + [p.grad for p in params.parameters()], [inputs] + params.parameters())])
        values = out.data * valid
        if run is run_lstm:
            fused_values = values
    np.testing.assert_allclose(fused_values, values, atol=1e-12)
    for a, b in zip(*grads):
        np.testing.assert_allclose(a, b, atol=1e-12)


def test_fused_lstm_gradient_check():
    params, x, lengths = random_case(3)
    inputs = Parameter(x, "x")
    weights = np.random.default_rng(9).normal(size=(3, 5, 3))
    report = grad_check(lambda: tsum(mul(run_lstm(params, inputs, lengths), weights)), [inputs] + params.parameters())
    assert report.passed, str(report)


def test_lstm_step_agrees_with_sequence_pass():
    params, x, lengths = random_case(1, b=1, t=3)
    h = c = np.zeros(3)
    with no_grad():
        full = run_lstm(params, x, [3]).data[0]
        for t in range(3):
            h, c = lstm_step(params, x[0, t], h, c)
            np.testing.assert_allclose(h.data, full[t], atol=1e-12)


def test_lstm_dimension_errors():
    params = init_lstm(np.random.default_rng(0), 4, 3, "l")
    with pytest.raises(DimensionError):
        lstm_step(params, np.zeros(5), np.zeros(3), np.zeros(3))
    with pytest.raises(DimensionError):
        lstm_step(params, np.zeros(4), np.zeros(2), np.zeros(3))
    with pytest.raises(DimensionError):
        run_lstm(params, np.zeros((1, 2, 5)), [2])


# -- reversal and BiLSTM ------------------------------------------------------------------------
def test_reverse_index_keeps_padding_in_place():
    np.testing.assert_array_equal(reverse_index([3, 1], 4), [[2, 1, 0, 3], [0, 1, 2, 3]])


@settings(max_examples=30)
@given(st.lists(st.integers(1, 6), min_size=1, max_size=4))
def test_reversal_is_an_involution(lengths):
    x = np.random.default_rng(len(lengths)).normal(size=(len(lengths), 6, 2))
    twice = reverse_within_length(reverse_within_length(x, lengths), lengths).data
    np.testing.assert_array_equal(twice, x)


@pytest.mark.parametrize("fused", [True, False])
def test_bilstm_directions_see_the_right_context(fused):
    rng = np.random.default_rng(0)
    params = init_bilstm(rng, 4, 3, "b")
    x = rng.normal(size=(1, 5, 4))
    with no_grad():
        base = run_bilstm(params, x, [5], fused).data
        changed = x.copy()
        changed[0, 2] += 1.0
        out = run_bilstm(params, changed, [5], fused).data
    # the forward half before position 2 and the backward half after it are untouched
    np.testing.assert_array_equal(out[0, :2, :3], base[0, :2, :3])
    np.testing.assert_array_equal(out[0, 3:, 3:], base[0, 3:, 3:])
    assert not np.allclose(out[0, 2:, :3], base[0, 2:, :3])
    assert not np.allclose(out[0, :3, 3:], base[0, :3, 3:])


def test_bilstm_ignores_padding_content():
    rng = np.random.default_rng(1)
    params = init_bilstm(rng, 4, 3, "b")
    x = rng.normal(size=(1, 5, 4))
    noisy = x.copy()
    noisy[0, 3:] = 100.0
    with no_grad():
        a = run_bilstm(params, x, [3]).data[0, :3]
        b = run_bilstm(params, noisy, [3]).data[0, :3]
    np.testing.assert_array_equal(a, b)


# -- characters and highway -----------------------------------------------------------------------
def test_char_batch_matches_single_words():
    rng = np.random.default_rng(2)
    table = Parameter(rng.normal(size=(6, 3)), "chars")
    params = init_bilstm(rng, 3, 2, "c")
    ids = np.array([[2, 3, 4], [5, 0, 0]])
    with no_grad():
        batch = char_encode_batch(table, params, ids, np.array([3, 1])).data
        single = char_encode(Token("x", (5,), 2), table, params).data
        whole = char_encode(Token("xyz", (2, 3, 4), 2), table, params).data
    np.testing.assert_allclose(batch[1], single, atol=1e-12)
    np.testing.assert_allclose(batch[0], whole, atol=1e-12)
    # forward half is the last forward state; backward half reads the word right to left
    fwd = numpy_lstm(params.forward, table.data[[2, 3, 4]])[-1]
    bwd = numpy_lstm(params.backward, table.data[[4, 3, 2]])[-1]
    np.testing.assert_allclose(batch[0], np.concatenate([fwd, bwd]), atol=1e-12)


def test_char_encoder_rejects_empty_words():
    rng = np.random.default_rng(0)
    with pytest.raises(UsageError):
        char_encode_batch(Parameter(np.zeros((3, 2)), "c"), init_bilstm(rng, 2, 2, "c"), np.zeros((1, 2)), np.array([0]))


def test_highway_gate_limits():
    rng = np.random.default_rng(3)
    params = init_highway(rng, 4, "h")
    x = rng.normal(size=(2, 4))
    params.b_gate.data[...] = -40.0
    with no_grad():
        np.testing.assert_allclose(highway(x, params).data, x, atol=1e-12)
        params.b_gate.data[...] = 40.0
        expected = np.maximum(x @ params.w_transform.data + params.b_transform.data, 0.0)
        np.testing.assert_allclose(highway(x, params).data, expected, atol=1e-12)
    with pytest.raises(DimensionError):
        highway(np.zeros((1, 3)), params)


# -- full encoder ------------------------------------------------------------------------------
def test_encoder_config_validation():
    with pytest.raises(ConfigError):
        EncoderConfig(word_hidden=0).validate()
    with pytest.raises(ConfigError):
        EncoderConfig(dropout_rate=1.0).validate()
    with pytest.raises(ConfigError):
        EncoderConfig(width_multiplier=0).validate()
    assert EncoderConfig(word_hidden=10, width_multiplier=0.5).private_hidden(True) == 5
    assert EncoderConfig(word_hidden=10, width_multiplier=0.5).private_hidden(False) == 10


def test_encoder_shapes_and_padding_row():
    cfg = EncoderConfig(3, 2, 4, 5, width_multiplier=0.6)
    enc = Encoder(cfg, n_words=10, n_chars=8, streams=("dec", "seg", "typ"))
    assert np.all(enc.word_table.data[0] == 0)
    assert enc.out_dim == 2 * 3
    with pytest.raises(ConfigError):
        Encoder(cfg, 10, 8, streams=("other",))


def test_encoder_respects_fixed_embeddings():
    enc = Encoder(EncoderConfig(3, 2, 4, 5, fix_embeddings=True), 10, 8)
    assert not enc.word_table.requires_grad


def test_encoder_is_deterministic_without_rng_and_stochastic_with():
    model, corpus = tiny_model("TIg")
    batch = make_batch(model.prepare_all(corpus))
    with no_grad():
        a = model.encoder.encode(batch).hidden["dec"].data
        b = model.encoder.encode(batch).hidden["dec"].data
        c = model.encoder.encode(batch, rng=np.random.default_rng(0)).hidden["dec"].data
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_encoder_perturbation_moves_outputs():
    model, corpus = tiny_model("Baseline")
    batch = make_batch(model.prepare_all(corpus))
    with no_grad():
        clean = model.encoder.encode(batch)
        shifted = model.encoder.encode(batch, perturbation=np.full(clean.embeddings.shape, 0.1))
    np.testing.assert_array_equal(clean.embeddings.data, shifted.embeddings.data)
    assert not np.array_equal(clean.hidden["dec"].data, shifted.hidden["dec"].data)


def test_pretrained_shape_checked():
    with pytest.raises(DimensionError):
        Encoder(EncoderConfig(3, 2, 4, 5), 10, 8, pretrained=np.zeros((9, 4)))
    table = np.ones((10, 4))
    enc = Encoder(EncoderConfig(3, 2, 4, 5), 10, 8, pretrained=table)
    assert np.all(enc.word_table.data[1:] == 1) and np.all(enc.word_table.data[0] == 0)
    assert isinstance(enc.word_table, Tensor)
