"""The denoising network and its word-decoder head.

Per noisy frame the model sees an 8-frame context block (the four previous
frames, the frame itself, and the three following, zero-padded at the
edges) shaped (1, 256, 8): one channel, frequency down the rows, time
across the columns. Three strided, dilated valid convolutions with ReLU
reduce each block to a feature vector, a two-layer LSTM tracks the frame
sequence, and an affine projection under a softplus emits the 256
non-negative denoised magnitudes for that frame.

The word decoder is a single LSTM cell over word embeddings. Its initial
hidden state is an affine image of the top encoder LSTM's final hidden
vector (cell state starts at zero), so everything it knows about the
utterance flows through that one vector. Teacher forcing feeds the
start-token followed by the transcript and the targets are the transcript
followed by the end token; greedy decoding feeds back its own argmax until
the end token or the length cap.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .autodiff import LstmParams, Tensor
from .dsp import FeatureSequence
from .errors import ConfigError, DimensionError
from .vocab import BOS_ID, EOS_ID, PAD_ID

__all__ = [
    "ConvLayerSpec",
    "CrnnConfig",
    "LmConfig",
    "CrnnParams",
    "LmDecoderParams",
    "ModelParams",
    "HiddenState",
    "context_window",
    "context_blocks",
    "conv_stack_forward",
    "crnn_forward",
    "init_crnn_params",
    "init_lm_params",
    "init_model_params",
    "lm_decode",
    "lm_greedy_decode",
    "named_parameters",
]


@dataclass(frozen=True)
class ConvLayerSpec:
    filters: int
    kernel: tuple[int, int]
    stride: tuple[int, int]


_FULL_CONV_STACK = (
    ConvLayerSpec(16, (7, 5), (3, 1)),
    ConvLayerSpec(32, (5, 3), (3, 1)),
    ConvLayerSpec(64, (5, 1), (3, 1)),
)


@dataclass(frozen=True)
class CrnnConfig:
    """Architecture of the denoiser.

    The default convolution geometry (kernels and strides, with dilation
    (2, 1) on every layer) matches the full-scale recipe; ``conv_filters``
    rescale the channel counts for smaller runs without touching that
    geometry. ``hidden`` defaults to the desk size.
    """

    context_frames: int = 8
    context_back: int = 4  # frames of past context; the rest look ahead
    conv_filters: tuple[int, int, int] = (16, 32, 64)
    dilation: tuple[int, int] = (2, 1)
    lstm_layers: int = 2
    hidden: int = 64
    out_dim: int = 256

    def validate(self) -> None:
        if self.out_dim != 256:
            raise ConfigError(f"model.out_dim must be 256, got {self.out_dim}")
        if self.context_frames < 1:
            raise ConfigError(f"model.context_frames must be >= 1, got {self.context_frames}")
        if not 0 <= self.context_back < self.context_frames:
            raise ConfigError(
                f"model.context_back must be in [0, context_frames), got {self.context_back}"
            )
        if len(self.conv_filters) != len(_FULL_CONV_STACK):
            raise ConfigError(
                f"model.conv_filters needs {len(_FULL_CONV_STACK)} entries, got {len(self.conv_filters)}"
            )
        if min(self.conv_filters) < 1:
            raise ConfigError("model.conv_filters entries must be >= 1")
        if self.lstm_layers < 1:
            raise ConfigError(f"model.lstm_layers must be >= 1, got {self.lstm_layers}")
        if self.hidden < 1:
            raise ConfigError(f"model.hidden must be >= 1, got {self.hidden}")
        self.conv_output_dims()  # raises if the chain collapses

    @property
    def conv_layers(self) -> tuple[ConvLayerSpec, ...]:
        return tuple(
            replace(spec, filters=f) for spec, f in zip(_FULL_CONV_STACK, self.conv_filters)
        )

    def conv_output_dims(self) -> list[tuple[int, int, int]]:
        """(channels, height, width) after each convolution layer."""
        h, w = self.out_dim, self.context_frames
        dims: list[tuple[int, int, int]] = []
        for spec in self.conv_layers:
            try:
                h = ad.conv_output_size(h, spec.kernel[0], spec.stride[0], self.dilation[0])
                w = ad.conv_output_size(w, spec.kernel[1], spec.stride[1], self.dilation[1])
            except DimensionError as exc:
                raise ConfigError(f"convolution stack does not fit its input: {exc}") from exc
            dims.append((spec.filters, h, w))
        return dims

    @property
    def flat_features(self) -> int:
        c, h, w = self.conv_output_dims()[-1]
        return c * h * w


@dataclass(frozen=True)
class LmConfig:
    """Architecture of the word decoder. Hidden size follows the encoder."""

    vocab_size: int = 857
    embed_dim: int = 64
    max_words: int = 60

    def validate(self) -> None:
        if self.vocab_size < 4:
            raise ConfigError(f"model.vocab_size must be >= 4, got {self.vocab_size}")
        if self.embed_dim < 1:
            raise ConfigError(f"model.embed_dim must be >= 1, got {self.embed_dim}")
        if self.max_words < 1:
            raise ConfigError(f"model.max_words must be >= 1, got {self.max_words}")


@dataclass
class CrnnParams:
    conv: list[tuple[Tensor, Tensor]]  # (kernels, bias) per layer
    lstm: list[LstmParams]
    proj_w: Tensor  # (hidden, out_dim)
    proj_b: Tensor  # (out_dim,)


@dataclass
class LmDecoderParams:
    embedding: Tensor  # (vocab, embed_dim)
    cell: LstmParams
    out_w: Tensor  # (hidden, vocab)
    out_b: Tensor  # (vocab,)
    bridge_w: Tensor  # (hidden, hidden)
    bridge_b: Tensor  # (hidden,)


@dataclass
class ModelParams:
    crnn: CrnnParams
    lm: LmDecoderParams


@dataclass
class HiddenState:
    """Final (h, c) pairs of the encoder LSTM stack, bottom to top."""

    layers: list[tuple[Tensor, Tensor]]

    @property
    def top_h(self) -> Tensor:
        return self.layers[-1][0]


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, shape).astype(np.float32), requires_grad=True)


def _lstm_params(rng: np.random.Generator, n_in: int, hidden: int) -> LstmParams:
    w_x = _uniform(rng, (4 * hidden, n_in), n_in)
    w_h = _uniform(rng, (4 * hidden, hidden), hidden)
    b = np.zeros(4 * hidden, dtype=np.float32)
    b[hidden : 2 * hidden] = 1.0  # open the forget gate at the start
    return LstmParams(w_x=w_x, w_h=w_h, b=Tensor(b, requires_grad=True))


def init_crnn_params(cfg: CrnnConfig, seed: int) -> CrnnParams:
    cfg.validate()
    rng = np.random.default_rng([seed, 21])
    conv = []
    c_in = 1
    for spec in cfg.conv_layers:
        k_h, k_w = spec.kernel
        kernels = _uniform(rng, (spec.filters, c_in, k_h, k_w), c_in * k_h * k_w)
        bias = Tensor(np.zeros(spec.filters, dtype=np.float32), requires_grad=True)
        conv.append((kernels, bias))
        c_in = spec.filters
    lstm = []
    n_in = cfg.flat_features
    for _ in range(cfg.lstm_layers):
        lstm.append(_lstm_params(rng, n_in, cfg.hidden))
        n_in = cfg.hidden
    proj_w = _uniform(rng, (cfg.hidden, cfg.out_dim), cfg.hidden)
    proj_b = Tensor(np.zeros(cfg.out_dim, dtype=np.float32), requires_grad=True)
    return CrnnParams(conv=conv, lstm=lstm, proj_w=proj_w, proj_b=proj_b)


def init_lm_params(cfg: CrnnConfig, lm_cfg: LmConfig, seed: int) -> LmDecoderParams:
    lm_cfg.validate()
    rng = np.random.default_rng([seed, 22])
    embedding = Tensor(
        rng.uniform(-0.1, 0.1, (lm_cfg.vocab_size, lm_cfg.embed_dim)).astype(np.float32),
        requires_grad=True,
    )
    cell = _lstm_params(rng, lm_cfg.embed_dim, cfg.hidden)
    out_w = _uniform(rng, (cfg.hidden, lm_cfg.vocab_size), cfg.hidden)
    out_b = Tensor(np.zeros(lm_cfg.vocab_size, dtype=np.float32), requires_grad=True)
    bridge_w = _uniform(rng, (cfg.hidden, cfg.hidden), cfg.hidden)
    bridge_b = Tensor(np.zeros(cfg.hidden, dtype=np.float32), requires_grad=True)
    return LmDecoderParams(
        embedding=embedding, cell=cell, out_w=out_w, out_b=out_b, bridge_w=bridge_w, bridge_b=bridge_b
    )


def init_model_params(cfg: CrnnConfig, lm_cfg: LmConfig, seed: int) -> ModelParams:
    """Seeded initialization; the encoder and decoder draw from separate
    streams, so runs that differ only in decoder usage share encoder values."""
    return ModelParams(crnn=init_crnn_params(cfg, seed), lm=init_lm_params(cfg, lm_cfg, seed))


def named_parameters(params: ModelParams | CrnnParams | LmDecoderParams, prefix: str = "") -> dict[str, Tensor]:
    """Flat, ordered name-to-tensor map used by the optimizer and checkpoints."""
    out: dict[str, Tensor] = {}
    if isinstance(params, ModelParams):
        out.update(named_parameters(params.crnn, "crnn."))
        out.update(named_parameters(params.lm, "lm."))
        return out
    if isinstance(params, CrnnParams):
        for i, (kernels, bias) in enumerate(params.conv):
            out[f"{prefix}conv{i}.kernels"] = kernels
            out[f"{prefix}conv{i}.bias"] = bias
        for i, cell in enumerate(params.lstm):
            out[f"{prefix}lstm{i}.w_x"] = cell.w_x
            out[f"{prefix}lstm{i}.w_h"] = cell.w_h
            out[f"{prefix}lstm{i}.b"] = cell.b
        out[f"{prefix}proj_w"] = params.proj_w
        out[f"{prefix}proj_b"] = params.proj_b
        return out
    out[f"{prefix}embedding"] = params.embedding
    out[f"{prefix}cell.w_x"] = params.cell.w_x
    out[f"{prefix}cell.w_h"] = params.cell.w_h
    out[f"{prefix}cell.b"] = params.cell.b
    out[f"{prefix}out_w"] = params.out_w
    out[f"{prefix}out_b"] = params.out_b
    out[f"{prefix}bridge_w"] = params.bridge_w
    out[f"{prefix}bridge_b"] = params.bridge_b
    return out


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------


def context_window(frames: np.ndarray, t: int, cfg: CrnnConfig | None = None) -> np.ndarray:
    """Context block for frame ``t``: shape (features, context_frames).

    Columns run from ``t - context_back`` through the remaining look-ahead
    frames, zero-padded where they fall outside the sequence.
    """
    cfg = cfg or CrnnConfig()
    frames = np.asarray(frames)
    if frames.ndim != 2:
        raise DimensionError(f"context_window: frames must be 2-D, got shape {frames.shape}")
    n_frames = frames.shape[0]
    if not 0 <= t < n_frames:
        raise IndexError(f"context_window: frame {t} out of range for {n_frames} frames")
    block = np.zeros((frames.shape[1], cfg.context_frames), dtype=frames.dtype)
    for col in range(cfg.context_frames):
        src = t - cfg.context_back + col
        if 0 <= src < n_frames:
            block[:, col] = frames[src]
    return block


def context_blocks(frames: np.ndarray, cfg: CrnnConfig) -> np.ndarray:
    """All context blocks at once: shape (T, 1, features, context_frames)."""
    frames = np.asarray(frames)
    n_frames, n_feat = frames.shape
    ahead = cfg.context_frames - cfg.context_back - 1
    padded = np.zeros((n_frames + cfg.context_back + ahead, n_feat), dtype=frames.dtype)
    padded[cfg.context_back : cfg.context_back + n_frames] = frames
    view = np.lib.stride_tricks.sliding_window_view(padded, cfg.context_frames, axis=0)
    # sliding_window_view yields (T, features, context); copy for contiguity
    return np.ascontiguousarray(view[:, np.newaxis, :, :])


def conv_stack_forward(window: Tensor | np.ndarray, params: CrnnParams, cfg: CrnnConfig) -> Tensor:
    """Convolution stack on one context block (1, 256, 8) -> flat features."""
    x = window if isinstance(window, Tensor) else Tensor(window)
    for spec, (kernels, bias) in zip(cfg.conv_layers, params.conv):
        x = ad.relu(ad.conv2d(x, kernels, bias, stride=spec.stride, dilation=cfg.dilation))
    return ad.reshape(x, (x.size,))


def crnn_forward(
    noisy: FeatureSequence | np.ndarray,
    params: CrnnParams,
    cfg: CrnnConfig,
) -> tuple[Tensor, HiddenState]:
    """Denoise a magnitude sequence.

    Returns the (T, 256) non-negative output and the final LSTM state. The
    convolution stack runs over all context blocks in one batched pass; the
    recurrence is stepwise. Output frame t only depends on input frames up
    to the context look-ahead, so the model is causal up to that horizon.
    """
    mags = noisy.magnitudes if isinstance(noisy, FeatureSequence) else np.asarray(noisy)
    if mags.ndim != 2 or mags.shape[1] != cfg.out_dim:
        raise DimensionError(
            f"crnn_forward: expected (T, {cfg.out_dim}) magnitudes, got shape {mags.shape}"
        )
    n_frames = mags.shape[0]
    blocks = Tensor(context_blocks(mags.astype(np.float32, copy=False), cfg))
    x = blocks
    for spec, (kernels, bias) in zip(cfg.conv_layers, params.conv):
        x = ad.relu(ad.conv2d(x, kernels, bias, stride=spec.stride, dilation=cfg.dilation))
    feats = ad.reshape(x, (n_frames, cfg.flat_features))

    dtype = params.proj_w.dtype
    h = [Tensor(np.zeros(cfg.hidden, dtype=dtype)) for _ in range(cfg.lstm_layers)]
    c = [Tensor(np.zeros(cfg.hidden, dtype=dtype)) for _ in range(cfg.lstm_layers)]
    top_rows: list[Tensor] = []
    for t in range(n_frames):
        layer_in = ad.row(feats, t)
        for li, cell in enumerate(params.lstm):
            h[li], c[li] = ad.lstm_step(layer_in, h[li], c[li], cell)
            layer_in = h[li]
        top_rows.append(layer_in)
    stacked = ad.stack_rows(top_rows)
    denoised = ad.softplus(ad.add_rowvec(ad.matmul(stacked, params.proj_w), params.proj_b))
    return denoised, HiddenState(layers=list(zip(h, c)))


def lm_decode(
    final: HiddenState,
    transcript: list[int],
    params: LmDecoderParams,
    lm_cfg: LmConfig,
) -> Tensor:
    """Teacher-forced decoder logits, shape (len(transcript) + 1, vocab).

    Row k scores the k-th target, i.e. the transcript shifted once with the
    end token appended. Inputs are the start token followed by the
    transcript.
    """
    if len(transcript) > lm_cfg.max_words:
        raise ValueError(
            f"lm_decode: transcript of {len(transcript)} words exceeds the {lm_cfg.max_words}-word cap"
        )
    for w in transcript:
        if not 0 <= int(w) < lm_cfg.vocab_size:
            raise ValueError(f"lm_decode: word id {w} outside vocabulary of size {lm_cfg.vocab_size}")

    h = ad.add(ad.matmul(params.bridge_w, final.top_h), params.bridge_b)
    c = Tensor(np.zeros(h.shape[0], dtype=params.bridge_w.dtype))
    rows: list[Tensor] = []
    for token in [BOS_ID, *[int(w) for w in transcript]]:
        x = ad.row(params.embedding, token)
        h, c = ad.lstm_step(x, h, c, params.cell)
        rows.append(h)
    hidden = ad.stack_rows(rows)
    return ad.add_rowvec(ad.matmul(hidden, params.out_w), params.out_b)


def lm_greedy_decode(
    final: HiddenState,
    params: LmDecoderParams,
    lm_cfg: LmConfig,
    max_len: int = 60,
) -> list[int]:
    """Greedy word sequence from the encoder's final state.

    Feeds back its own argmax (start and pad tokens masked out) until the
    end token appears or ``max_len`` words have been emitted. The end token
    is not part of the returned sequence. Run outside a graph context; this
    never records tape nodes worth keeping.
    """
    bridge = ad.matmul(params.bridge_w, final.top_h)
    h = ad.add(bridge, params.bridge_b)
    c = Tensor(np.zeros(h.shape[0], dtype=params.bridge_w.dtype))
    token = BOS_ID
    out: list[int] = []
    for _ in range(max_len + 1):
        x = ad.row(params.embedding, token)
        h, c = ad.lstm_step(x, h, c, params.cell)
        logits = params.out_w.data.T @ h.data + params.out_b.data
        logits[BOS_ID] = -np.inf
        logits[PAD_ID] = -np.inf
        token = int(np.argmax(logits))
        if token == EOS_ID or len(out) == max_len:
            break
        out.append(token)
    return out
