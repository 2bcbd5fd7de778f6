"""Convolutional-recurrent seq2seq network with dot-product attention.

Layout of a forward pass, for a batch of ``B`` log-mel matrices ``[N, n_mel]``:

* two conv blocks (5x1 kernel along time, zero pad 2, leaky ReLU, batch norm),
  the second one reducing to a single channel;
* a two-stack bidirectional GRU encoder whose per-direction outputs feed the
  matching direction of the next stack;
* a two-stack GRU decoder initialized from the concatenated final encoder
  states of each stack, fed the one-hot previous token;
* attention weights ``softmax(enc_outputs . d)`` and context vector, then
  ``tanh`` dense layers over ``[context, d]`` producing ``T`` logits.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DimensionMismatch, InvalidConfig
from .vocab import control_ids

KERNEL_HEIGHT = 5
CONV_PAD = (2, 0)


@dataclass(frozen=True)
class ModelConfig:
    n_mel: int = 80
    conv1_filters: int = 10
    conv2_filters: int = 1
    enc_hidden: int = 64
    dec_hidden: int = 128
    dense_hidden: int = 64
    T: int = 31
    max_decode_len: int = 16

    def validate(self) -> "ModelConfig":
        for f in fields(self):
            if getattr(self, f.name) < 1:
                raise InvalidConfig(f"{f.name} must be >= 1, got {getattr(self, f.name)}")
        if self.dec_hidden != 2 * self.enc_hidden:
            raise InvalidConfig(
                f"dec_hidden ({self.dec_hidden}) must equal 2 * enc_hidden ({2 * self.enc_hidden})"
            )
        if self.T < 5:
            raise InvalidConfig(f"T must cover the 5 control tokens, got {self.T}")
        return self

    @property
    def beg(self) -> int:
        return control_ids(self.T)["BEG"]

    @property
    def end(self) -> int:
        return control_ids(self.T)["END"]

    @property
    def dense_in(self) -> int:
        return 2 * self.dec_hidden

    def as_ints(self) -> list[int]:
        return [int(v) for v in asdict(self).values()]

    @classmethod
    def from_ints(cls, values) -> "ModelConfig":
        names = [f.name for f in fields(cls)]
        if len(values) != len(names):
            raise InvalidConfig(f"expected {len(names)} config values, got {len(values)}")
        return cls(**{n: int(v) for n, v in zip(names, values)})


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Every named tensor of the model, in canonical order."""
    shapes: dict[str, tuple[int, ...]] = {}

    def conv(name, cin, cout):
        shapes[f"{name}.kernel"] = (KERNEL_HEIGHT, 1, cin, cout)
        shapes[f"{name}.bias"] = (cout,)
        for p in ("gamma", "beta", "running_mean", "running_var"):
            shapes[f"{name}.bn.{p}"] = (cout,)

    def gru(name, n_in, hidden):
        shapes[f"{name}.W_x"] = (n_in, 3 * hidden)
        shapes[f"{name}.W_h"] = (hidden, 3 * hidden)
        shapes[f"{name}.b_x"] = (3 * hidden,)
        shapes[f"{name}.b_h"] = (3 * hidden,)

    conv("conv1", 1, cfg.conv1_filters)
    conv("conv2", cfg.conv1_filters, cfg.conv2_filters)
    enc_in = cfg.n_mel * cfg.conv2_filters
    for d in ("fwd", "bwd"):
        gru(f"enc1.{d}", enc_in, cfg.enc_hidden)
    for d in ("fwd", "bwd"):
        gru(f"enc2.{d}", cfg.enc_hidden, cfg.enc_hidden)
    gru("dec1", cfg.T, cfg.dec_hidden)
    gru("dec2", cfg.dec_hidden, cfg.dec_hidden)
    shapes["dense1.weight"] = (cfg.dense_in, cfg.dense_hidden)
    shapes["dense1.bias"] = (cfg.dense_hidden,)
    shapes["dense2.weight"] = (cfg.dense_hidden, cfg.T)
    shapes["dense2.bias"] = (cfg.T,)
    return shapes


def is_buffer(name: str) -> bool:
    return ".running_" in name


def trainable(params: dict[str, Tensor]) -> dict[str, Tensor]:
    return {k: v for k, v in params.items() if not is_buffer(k)}


def count_parameters(cfg: ModelConfig, include_buffers: bool = False) -> int:
    return sum(int(np.prod(s)) for k, s in param_shapes(cfg).items()
               if include_buffers or not is_buffer(k))


def _fan_in(name: str, shape: tuple[int, ...], cfg: ModelConfig) -> int:
    if name.startswith("conv"):
        return int(np.prod(shape[:3])) if name.endswith("kernel") else KERNEL_HEIGHT * (
            1 if name.startswith("conv1") else cfg.conv1_filters)
    if name.startswith(("enc", "dec")):
        return shape[-1] // 3
    if name.startswith("dense1"):
        return cfg.dense_in
    return cfg.dense_hidden


def init_model(cfg: ModelConfig, seed: int, dtype=np.float32) -> dict[str, Tensor]:
    """Seeded uniform init in ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]``; BN starts at identity."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith((".gamma", ".running_var")):
            data = np.ones(shape)
        elif name.endswith((".beta", ".running_mean")):
            data = np.zeros(shape)
        else:
            bound = 1.0 / np.sqrt(_fan_in(name, shape, cfg))
            data = rng.uniform(-bound, bound, size=shape)
        params[name] = Tensor(data.astype(dtype), requires_grad=not is_buffer(name))
    return params


def check_params(params: dict[str, Tensor], cfg: ModelConfig) -> None:
    expected = param_shapes(cfg)
    missing = [k for k in expected if k not in params]
    if missing:
        raise DimensionMismatch(f"parameters missing: {missing[:5]}")
    for k, shape in expected.items():
        if params[k].shape != shape:
            raise DimensionMismatch(f"{k}: expected shape {shape}, got {params[k].shape}")


# Building blocks -------------------------------------------------------------

def _conv_block(x: Tensor, params, name: str, training: bool) -> Tensor:
    y = ad.conv2d(x, params[f"{name}.kernel"], params[f"{name}.bias"], padding=CONV_PAD)
    y = ad.leaky_relu(y)
    return ad.batch_norm(y, params[f"{name}.bn.gamma"], params[f"{name}.bn.beta"],
                         params[f"{name}.bn.running_mean"].data,
                         params[f"{name}.bn.running_var"].data, training)


def gru_cell(x_proj: Tensor, h: Tensor, params, name: str) -> Tensor:
    """One GRU update given the precomputed input projection ``x W_x + b_x``.

    ``r, z = sigmoid(.)``; ``n = tanh(x_n + r * (h W_hn + b_hn))``;
    ``h' = n + z * (h - n)``.
    """
    hidden = h.shape[-1]
    h_proj = ad.add(ad.matmul(h, params[f"{name}.W_h"]), params[f"{name}.b_h"])
    x_rz, x_n = ad.split(x_proj, [2 * hidden, hidden], axis=-1)
    h_rz, h_n = ad.split(h_proj, [2 * hidden, hidden], axis=-1)
    r, z = ad.split(ad.sigmoid(ad.add(x_rz, h_rz)), 2, axis=-1)
    n = ad.tanh(ad.add(x_n, ad.hadamard(r, h_n)))
    return ad.add(n, ad.hadamard(z, ad.add(h, ad.scale(n, -1.0))))


def input_projection(x: Tensor, params, name: str) -> Tensor:
    return ad.add(ad.matmul(x, params[f"{name}.W_x"]), params[f"{name}.b_x"])


def run_gru(seq: Tensor, params, name: str, reverse: bool = False) -> tuple[list[Tensor], Tensor]:
    """Run a GRU over ``seq`` ``[B, N, in]`` from a zero state.

    Returns per-step outputs in time order and the final state (for a reversed
    pass, the state after consuming step 0).
    """
    b, n, _ = seq.shape
    hidden = params[f"{name}.W_h"].shape[0]
    steps = ad.split(input_projection(seq, params, name), n, axis=1, squeeze=True)
    h = Tensor(np.zeros((b, hidden), dtype=seq.dtype))
    outputs: list[Tensor | None] = [None] * n
    order = range(n - 1, -1, -1) if reverse else range(n)
    for t in order:
        h = gru_cell(steps[t], h, params, name)
        outputs[t] = h
    return outputs, h


def stack(tensors: list[Tensor], axis: int = 1) -> Tensor:
    """Stack equal-shape tensors along a new ``axis``."""
    shape = list(tensors[0].shape)
    shape.insert(axis, 1)
    return ad.concat([ad.reshape(t, shape) for t in tensors], axis=axis)


class EncoderOutputs(NamedTuple):
    outputs: Tensor           # [B, N, 2 * enc_hidden]
    final_states: list        # two [B, 2 * enc_hidden] decoder initializers


class StepOutput(NamedTuple):
    logits: Tensor            # [B, T]
    states: list              # two [B, dec_hidden]
    alignment: Tensor         # [B, N]


def _as_batch(spec, cfg: ModelConfig, dtype) -> np.ndarray:
    x = np.asarray(getattr(spec, "values", spec), dtype=dtype)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3 or x.shape[-1] != cfg.n_mel:
        raise DimensionMismatch(f"expected [batch, frames, {cfg.n_mel}] input, got shape {x.shape}")
    if x.shape[1] < 1:
        raise DimensionMismatch("spectrogram has no frames")
    return x


def conv_stack(x: np.ndarray | Tensor, params, cfg: ModelConfig, training: bool) -> Tensor:
    """``[B, N, n_mel]`` -> ``[B, N, conv2_filters * n_mel]``."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    b, n, m = x.shape
    img = ad.reshape(x, (b, 1, n, m))
    img = _conv_block(img, params, "conv1", training)
    img = _conv_block(img, params, "conv2", training)
    cols = ad.transpose(img, (0, 2, 1, 3))
    return ad.reshape(cols, (b, n, cfg.conv2_filters * m))


def encode(spec, params, cfg: ModelConfig, training: bool = False) -> EncoderOutputs:
    x = _as_batch(spec, cfg, params["conv1.kernel"].dtype)
    seq = conv_stack(x, params, cfg, training)
    f1, hf1 = run_gru(seq, params, "enc1.fwd")
    b1, hb1 = run_gru(seq, params, "enc1.bwd", reverse=True)
    f2, hf2 = run_gru(stack(f1), params, "enc2.fwd")
    b2, hb2 = run_gru(stack(b1), params, "enc2.bwd", reverse=True)
    outputs = stack([ad.concat([f, bk], axis=-1) for f, bk in zip(f2, b2)])
    finals = [ad.concat([hf1, hb1], axis=-1), ad.concat([hf2, hb2], axis=-1)]
    return EncoderOutputs(outputs, finals)


def decode_step(prev_onehot, states, enc: EncoderOutputs, params, cfg: ModelConfig) -> StepOutput:
    prev = prev_onehot if isinstance(prev_onehot, Tensor) else Tensor(
        np.asarray(prev_onehot, dtype=params["dec1.W_x"].dtype))
    if prev.ndim == 1:
        prev = ad.reshape(prev, (1, -1))
    b = enc.outputs.shape[0]
    if prev.shape != (b, cfg.T):
        raise DimensionMismatch(f"previous token must be [{b}, {cfg.T}], got {prev.shape}")
    for s in states:
        if s.shape != (b, cfg.dec_hidden):
            raise DimensionMismatch(f"decoder state must be [{b}, {cfg.dec_hidden}], got {s.shape}")
    s1 = gru_cell(input_projection(prev, params, "dec1"), states[0], params, "dec1")
    s2 = gru_cell(input_projection(s1, params, "dec2"), states[1], params, "dec2")
    n = enc.outputs.shape[1]
    scores = ad.matmul(enc.outputs, ad.reshape(s2, (b, cfg.dec_hidden, 1)))
    alignment = ad.softmax(ad.reshape(scores, (b, n)), axis=-1)
    context = ad.reshape(ad.matmul(ad.reshape(alignment, (b, 1, n)), enc.outputs), (b, cfg.dec_hidden))
    hidden = ad.tanh(ad.add(ad.matmul(ad.concat([context, s2], axis=-1), params["dense1.weight"]),
                            params["dense1.bias"]))
    logits = ad.tanh(ad.add(ad.matmul(hidden, params["dense2.weight"]), params["dense2.bias"]))
    return StepOutput(logits, [s1, s2], alignment)


class ForwardResult(NamedTuple):
    logits: Tensor            # [B, steps, T]
    predicted: np.ndarray     # [B, steps] argmax per step
    fed: np.ndarray           # [B, steps] token fed into each step


def forward(spec, params, cfg: ModelConfig, teacher=None, tf_prob: float = 0.0,
            rng: np.random.Generator | None = None, training: bool = False,
            n_steps: int | None = None, stop_at_end: bool | None = None) -> ForwardResult:
    """Run encoder and decoder loop.

    The first decoder input is BEG. With a ``teacher`` ``[B, L]`` the loop runs
    ``L - 1`` steps and each sample independently feeds the ground-truth previous
    token with probability ``tf_prob`` (else its own argmax). Without one the
    loop runs at most ``n_steps`` (default ``max_decode_len``) and, unless
    ``stop_at_end`` is False, stops once every sample has emitted END.
    """
    if teacher is not None:
        teacher = np.atleast_2d(np.asarray(teacher, dtype=np.int64))
        if not 0.0 <= tf_prob <= 1.0:
            raise ValueError(f"tf_prob must be in [0, 1], got {tf_prob}")
        n_steps = teacher.shape[1] - 1
        stop_at_end = False if stop_at_end is None else stop_at_end
    else:
        n_steps = cfg.max_decode_len if n_steps is None else n_steps
        stop_at_end = True if stop_at_end is None else stop_at_end
    enc = encode(spec, params, cfg, training)
    b = enc.outputs.shape[0]
    if teacher is not None and teacher.shape[0] != b:
        raise DimensionMismatch(f"teacher batch {teacher.shape[0]} != input batch {b}")
    if rng is None:
        rng = np.random.default_rng(0)
    eye = np.eye(cfg.T, dtype=params["dec1.W_x"].dtype)
    states = list(enc.final_states)
    prev = np.full(b, cfg.beg, dtype=np.int64)
    finished = np.zeros(b, dtype=bool)
    logits, predicted, fed = [], [], []
    for t in range(n_steps):
        if teacher is not None and t > 0 and tf_prob > 0:
            use_truth = np.ones(b, dtype=bool) if tf_prob >= 1 else rng.random(b) < tf_prob
            prev = np.where(use_truth, teacher[:, t], prev)
        fed.append(prev)
        out = decode_step(eye[prev], states, enc, params, cfg)
        states = out.states
        logits.append(out.logits)
        prev = out.logits.data.argmax(axis=-1)
        predicted.append(prev)
        finished |= prev == cfg.end
        if stop_at_end and finished.all():
            break
    return ForwardResult(stack(logits, axis=1), np.stack(predicted, axis=1), np.stack(fed, axis=1))


def greedy_decode(spec, params, cfg: ModelConfig) -> list[list[int]]:
    """Free-running decode; each result is ``[BEG, ...]`` through the first END."""
    res = forward(spec, params, cfg)
    out = []
    for row in res.predicted:
        seq = [cfg.beg]
        for tok in row:
            seq.append(int(tok))
            if tok == cfg.end:
                break
        out.append(seq)
    return out
