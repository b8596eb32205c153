"""Token representations and private word-level BiLSTMs.

A token is represented by a character BiLSTM summary (optionally passed
through a highway layer) concatenated with its word embedding; that shared
vector feeds one private BiLSTM per module. Everything runs batched over
padded ``(B, T, D)`` arrays with explicit lengths.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError, UsageError
from .tensor import (
    _make,
    Parameter,
    Tensor,
    add,
    as_tensor,
    concat,
    dropout,
    gather,
    matmul,
    mul,
    relu,
    reshape,
    sigmoid,
    stack,
    sub,
    take,
    tanh,
)


@dataclass(frozen=True)
class EncoderConfig:
    char_embed_dim: int = 30
    char_hidden: int = 25
    word_embed_dim: int = 100
    word_hidden: int = 300
    dropout_rate: float = 0.5
    use_highway: bool = True
    fix_embeddings: bool = False
    width_multiplier: float = 1.0
    fused_lstm: bool = True

    def validate(self) -> None:
        for name in ("char_embed_dim", "char_hidden", "word_embed_dim", "word_hidden"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate {self.dropout_rate} outside [0, 1)")
        if not self.width_multiplier > 0:
            raise ConfigError("width_multiplier must be positive")

    @property
    def char_out(self) -> int:
        return 2 * self.char_hidden

    @property
    def token_dim(self) -> int:
        return self.char_out + self.word_embed_dim

    def private_hidden(self, modular: bool) -> int:
        """Per-direction hidden size; the width multiplier only shrinks modular stacks."""
        if not modular:
            return self.word_hidden
        return max(1, int(round(self.word_hidden * self.width_multiplier)))


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape or (fan_in, fan_out))


# -- LSTM ----------------------------------------------------------------------------
@dataclass
class LstmCellParams:
    """Fused gate weights, column blocks ordered input, forget, output, candidate."""

    w_input: Parameter  # (input_dim, 4H)
    w_hidden: Parameter  # (H, 4H)
    bias: Parameter  # (4H,)

    @property
    def hidden(self) -> int:
        return self.w_hidden.shape[0]

    @property
    def input_dim(self) -> int:
        return self.w_input.shape[0]

    def parameters(self) -> list:
        return [self.w_input, self.w_hidden, self.bias]


def init_lstm(rng: np.random.Generator, input_dim: int, hidden: int, name: str) -> LstmCellParams:
    w_x = np.concatenate([glorot(rng, input_dim, hidden) for _ in range(4)], axis=1)
    w_h = np.concatenate([glorot(rng, hidden, hidden) for _ in range(4)], axis=1)
    b = np.zeros(4 * hidden)
    b[hidden : 2 * hidden] = 1.0
    return LstmCellParams(Parameter(w_x, f"{name}.w_input"), Parameter(w_h, f"{name}.w_hidden"), Parameter(b, f"{name}.bias"))


def _cell(pre: Tensor, c_prev: Tensor | None, hidden: int) -> tuple:
    """Gate nonlinearities and state update from pre-activations ``(B, 4H)``."""
    gates = sigmoid(take(pre, (slice(None), slice(0, 3 * hidden))))
    cand = tanh(take(pre, (slice(None), slice(3 * hidden, None))))
    i = take(gates, (slice(None), slice(0, hidden)))
    o = take(gates, (slice(None), slice(2 * hidden, 3 * hidden)))
    c = mul(i, cand)
    if c_prev is not None:
        f = take(gates, (slice(None), slice(hidden, 2 * hidden)))
        c = add(mul(f, c_prev), c)
    return mul(o, tanh(c)), c


def lstm_step(params: LstmCellParams, x_t, h_prev, c_prev) -> tuple:
    """One recurrence step: returns ``(h_t, c_t)``; accepts 1-D or batched 2-D inputs."""
    x_t, h_prev, c_prev = as_tensor(x_t), as_tensor(h_prev), as_tensor(c_prev)
    single = x_t.ndim == 1
    if single:
        x_t, h_prev, c_prev = (reshape(v, (1, -1)) for v in (x_t, h_prev, c_prev))
    hidden = params.hidden
    if x_t.shape[-1] != params.input_dim:
        raise DimensionError(f"input of width {x_t.shape[-1]} for LSTM expecting {params.input_dim}")
    if h_prev.shape[-1] != hidden or c_prev.shape[-1] != hidden:
        raise DimensionError(f"state width {h_prev.shape[-1]}/{c_prev.shape[-1]} for hidden size {hidden}")
    pre = add(add(matmul(x_t, params.w_input), matmul(h_prev, params.w_hidden)), params.bias)
    h, c = _cell(pre, c_prev, hidden)
    if single:
        h, c = reshape(h, (hidden,)), reshape(c, (hidden,))
    return h, c


def run_lstm_composed(params: LstmCellParams, inputs, lengths) -> Tensor:
    """Reference left-to-right pass built from per-step graph operations."""
    inputs = as_tensor(inputs)
    b, t_max, d = inputs.shape
    if d != params.input_dim:
        raise DimensionError(f"input of width {d} for LSTM expecting {params.input_dim}")
    hidden = params.hidden
    steps = int(np.max(lengths))
    projected = add(matmul(inputs, params.w_input), params.bias)  # (B, T, 4H)
    h = c = None
    outputs = []
    for t in range(steps):
        pre = take(projected, (slice(None), t, slice(None)))
        if h is not None:
            pre = add(pre, matmul(h, params.w_hidden))
        h, c = _cell(pre, c, hidden)
        outputs.append(h)
    if steps < t_max:
        pad = Tensor(np.zeros((b, hidden)))
        outputs.extend([pad] * (t_max - steps))
    return stack(outputs, axis=1)


def _sig(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def run_lstm(params: LstmCellParams, inputs, lengths) -> Tensor:
    """Left-to-right pass over ``(B, T, D)``; returns hidden states ``(B, T, H)``.

    One graph node for the whole sequence, with backpropagation through time
    written out by hand; it computes exactly what ``run_lstm_composed`` does.
    States at padded positions are computed but meaningless; callers ignore them.
    """
    inputs = as_tensor(inputs)
    b, t_max, d = inputs.shape
    if d != params.input_dim:
        raise DimensionError(f"input of width {d} for LSTM expecting {params.input_dim}")
    hd = params.hidden
    steps = int(np.max(lengths))
    x = inputs.data
    w_x, w_h, bias = params.w_input, params.w_hidden, params.bias
    proj = x @ w_x.data + bias.data
    out = np.zeros((b, t_max, hd))
    cache = []
    h = np.zeros((b, hd))
    c = np.zeros((b, hd))
    for t in range(steps):
        z = proj[:, t] + h @ w_h.data if t else proj[:, t]
        gates = _sig(z[:, : 3 * hd])
        g = np.tanh(z[:, 3 * hd :])
        i, f, o = gates[:, :hd], gates[:, hd : 2 * hd], gates[:, 2 * hd :]
        c_prev, h_prev = c, h
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        out[:, t] = h
        cache.append((i, f, o, g, c_prev, h_prev, tc))

    def backward(grad):
        d_proj = np.zeros((b, t_max, 4 * hd))
        d_wh = np.zeros_like(w_h.data)
        dh_next = np.zeros((b, hd))
        dc_next = np.zeros((b, hd))
        for t in range(steps - 1, -1, -1):
            i, f, o, g, c_prev, h_prev, tc = cache[t]
            dh = grad[:, t] + dh_next
            dc = dh * o * (1.0 - tc * tc) + dc_next
            dz = d_proj[:, t]
            dz[:, :hd] = dc * g * i * (1.0 - i)
            dz[:, hd : 2 * hd] = dc * c_prev * f * (1.0 - f)
            dz[:, 2 * hd : 3 * hd] = dh * tc * o * (1.0 - o)
            dz[:, 3 * hd :] = dc * i * (1.0 - g * g)
            dc_next = dc * f
            if t:
                d_wh += h_prev.T @ dz
                dh_next = dz @ w_h.data.T
        flat = d_proj.reshape(-1, 4 * hd)
        return (
            (d_proj @ w_x.data.T) if inputs.requires_grad else None,
            x.reshape(-1, d).T @ flat if w_x.requires_grad else None,
            d_wh if w_h.requires_grad else None,
            flat.sum(axis=0) if bias.requires_grad else None,
        )

    return _make(out, (inputs, w_x, w_h, bias), backward)


def reverse_index(lengths, t_max: int) -> np.ndarray:
    """Per-row permutation reversing the first ``length`` positions; padding stays put."""
    lengths = np.asarray(lengths)
    pos = np.arange(t_max)[None, :]
    return np.where(pos < lengths[:, None], lengths[:, None] - 1 - pos, pos)


def reverse_within_length(x, lengths) -> Tensor:
    x = as_tensor(x)
    b, t_max = x.shape[:2]
    rows = np.arange(b)[:, None]
    return take(x, (rows, reverse_index(lengths, t_max)))


@dataclass
class BiLstmParams:
    forward: LstmCellParams
    backward: LstmCellParams

    def parameters(self) -> list:
        return self.forward.parameters() + self.backward.parameters()

    @property
    def out_dim(self) -> int:
        return self.forward.hidden + self.backward.hidden


def init_bilstm(rng, input_dim: int, hidden: int, name: str) -> BiLstmParams:
    return BiLstmParams(init_lstm(rng, input_dim, hidden, f"{name}.fwd"), init_lstm(rng, input_dim, hidden, f"{name}.bwd"))


def run_bilstm(params: BiLstmParams, inputs, lengths, fused: bool = True) -> Tensor:
    """Concatenated forward and backward states ``(B, T, 2H)``."""
    run = run_lstm if fused else run_lstm_composed
    fwd = run(params.forward, inputs, lengths)
    bwd = reverse_within_length(run(params.backward, reverse_within_length(inputs, lengths), lengths), lengths)
    return concat([fwd, bwd], axis=2)


# -- characters and highway ------------------------------------------------------------
def char_encode_batch(char_table, params: BiLstmParams, char_ids: np.ndarray, char_lengths: np.ndarray, fused: bool = True) -> Tensor:
    """Summaries ``(N, 2H)`` for N words: last forward state and first backward state."""
    char_ids = np.asarray(char_ids, dtype=np.intp)
    char_lengths = np.asarray(char_lengths, dtype=np.intp)
    if np.any(char_lengths < 1):
        raise UsageError("every word needs at least one character id")
    emb = gather(char_table, char_ids)  # (N, C, d)
    n = char_ids.shape[0]
    run = run_lstm if fused else run_lstm_composed
    fwd = run(params.forward, emb, char_lengths)
    bwd = run(params.backward, reverse_within_length(emb, char_lengths), char_lengths)
    last = take(fwd, (np.arange(n), char_lengths - 1))
    # the backward pass reads the word reversed, so its final state sits at length-1 too
    first = take(bwd, (np.arange(n), char_lengths - 1))
    return concat([last, first], axis=1)


def char_encode(token, char_table, params: BiLstmParams) -> Tensor:
    """Character summary of one indexed token (an empty word reads a single padding character)."""
    ids = tuple(token.characters) or (0,)
    return reshape(char_encode_batch(char_table, params, np.array([ids]), np.array([len(ids)])), (-1,))


@dataclass
class HighwayParams:
    w_transform: Parameter
    b_transform: Parameter
    w_gate: Parameter
    b_gate: Parameter

    def parameters(self) -> list:
        return [self.w_transform, self.b_transform, self.w_gate, self.b_gate]


def init_highway(rng, dim: int, name: str) -> HighwayParams:
    return HighwayParams(
        Parameter(glorot(rng, dim, dim), f"{name}.w_transform"),
        Parameter(np.zeros(dim), f"{name}.b_transform"),
        Parameter(glorot(rng, dim, dim), f"{name}.w_gate"),
        Parameter(np.zeros(dim), f"{name}.b_gate"),
    )


def highway(x, params: HighwayParams) -> Tensor:
    """gate * relu(transform) + (1 - gate) * x, with a square transform."""
    x = as_tensor(x)
    dim = params.w_transform.shape[0]
    if x.shape[-1] != dim or params.w_transform.shape != (dim, dim):
        raise DimensionError(f"highway of width {dim} applied to input of width {x.shape[-1]}")
    gate = sigmoid(add(matmul(x, params.w_gate), params.b_gate))
    transformed = relu(add(matmul(x, params.w_transform), params.b_transform))
    return add(mul(gate, sub(transformed, x)), x)


# -- full encoder -----------------------------------------------------------------
STREAMS = ("dec", "seg", "typ")


@dataclass
class EncodedBatch:
    embeddings: Tensor  # (B, T, token_dim) shared token representations
    hidden: dict  # stream -> (B, T, 2H)


class Encoder:
    """Shared token representation plus private BiLSTMs for the requested streams."""

    def __init__(
        self,
        config: EncoderConfig,
        n_words: int,
        n_chars: int,
        streams=("dec",),
        rng: np.random.Generator | None = None,
        pretrained: np.ndarray | None = None,
    ):
        config.validate()
        rng = rng or np.random.default_rng(0)
        self.config = config
        self.streams = tuple(streams)
        for s in self.streams:
            if s not in STREAMS:
                raise ConfigError(f"unknown stream {s!r}")
        bound_w = math.sqrt(3.0 / config.word_embed_dim)
        words = rng.uniform(-bound_w, bound_w, size=(n_words, config.word_embed_dim))
        if pretrained is not None:
            if pretrained.shape != words.shape:
                raise DimensionError(f"pretrained matrix {pretrained.shape} != {words.shape}")
            words = pretrained.copy()
        words[0] = 0.0
        self.word_table = Parameter(words, "embed.words")
        self.word_table.requires_grad = not config.fix_embeddings
        bound_c = math.sqrt(3.0 / config.char_embed_dim)
        self.char_table = Parameter(rng.uniform(-bound_c, bound_c, size=(n_chars, config.char_embed_dim)), "embed.chars")
        self.char_lstm = init_bilstm(rng, config.char_embed_dim, config.char_hidden, "char")
        self.highway = init_highway(rng, config.char_out, "highway") if config.use_highway else None
        hidden = config.private_hidden(modular=len(self.streams) > 1)
        self.private = {s: init_bilstm(rng, config.token_dim, hidden, f"lstm.{s}") for s in self.streams}

    @property
    def out_dim(self) -> int:
        return next(iter(self.private.values())).out_dim

    def shared_parameters(self) -> list:
        params = [self.word_table, self.char_table] + self.char_lstm.parameters()
        if self.highway is not None:
            params += self.highway.parameters()
        return params

    def parameters(self) -> list:
        params = self.shared_parameters()
        for s in self.streams:
            params += self.private[s].parameters()
        return params

    def token_representations(self, batch) -> Tensor:
        """Shared ``(B, T, token_dim)`` vectors: char summary (highway) ++ word embedding."""
        chars = char_encode_batch(
            self.char_table, self.char_lstm, batch.char_ids, batch.char_lengths, self.config.fused_lstm
        )
        if self.highway is not None:
            chars = highway(chars, self.highway)
        chars = take(chars, batch.token_rows)  # (B, T, char_out)
        words = gather(self.word_table, batch.word_ids)
        return concat([chars, words], axis=2)

    def encode(self, batch, streams=None, rng=None, perturbation=None) -> EncodedBatch:
        """Run the requested private BiLSTMs over the shared representation.

        ``rng`` switches on training-mode dropout; ``perturbation`` (constant
        array) is added to the token representations before dropout.
        """
        streams = self.streams if streams is None else tuple(streams)
        emb = self.token_representations(batch)
        if perturbation is not None:
            emb_in = add(emb, Tensor(perturbation))
        else:
            emb_in = emb
        rate = self.config.dropout_rate
        emb_in = dropout(emb_in, rate, rng)
        hidden = {}
        for s in streams:
            if s not in self.private:
                raise ConfigError(f"encoder has no {s!r} BiLSTM")
            states = run_bilstm(self.private[s], emb_in, batch.lengths, self.config.fused_lstm)
            hidden[s] = dropout(states, rate, rng)
        return EncodedBatch(emb, hidden)
