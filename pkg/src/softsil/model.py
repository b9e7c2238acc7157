"""Small MLP encoder + projection head with explicit forward/backward passes,
an AdamW optimizer, and a binary checkpoint format with bit-exact round-trips."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .embedding import EmbeddingBatch, l2_normalize_backward, l2_normalize_rows
from .errors import (
    CheckpointFormatError,
    InvalidState,
    NumericalFailure,
    ShapeError,
    TruncatedPayload,
)


@dataclass
class ModelConfig:
    input_dim: int
    encoder_widths: tuple = (512, 256)  # hidden widths, last entry = feature width
    head_hidden: int = 128  # 0 = identity head (projections = normalized features)
    embed_dim: int = 64
    dropout_rate: float = 0.2

    def __post_init__(self):
        self.encoder_widths = tuple(int(w) for w in self.encoder_widths)
        if not self.encoder_widths:
            raise ValueError("encoder needs at least one layer")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")

    @property
    def feature_dim(self) -> int:
        return self.encoder_widths[-1]

    @property
    def projection_dim(self) -> int:
        return self.embed_dim if self.head_hidden > 0 else self.feature_dim


@dataclass
class Tape:
    """Intermediates of one forward pass, consumed by backward."""

    version: int
    mode: str
    enc_inputs: list
    relu_masks: list
    relu_pres: list  # pre-activation values at every rectifier
    dropout_masks: list
    features: np.ndarray
    head_input: np.ndarray | None
    head_hidden_act: np.ndarray | None
    head_relu_mask: np.ndarray | None
    p_raw: np.ndarray


class MlpModel:
    """Parameters live in an ordered name -> array dict so the optimizer and
    checkpoint code can treat the whole model uniformly."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.config = config
        self.params: dict[str, np.ndarray] = {}
        self.version = 0
        widths = (config.input_dim,) + config.encoder_widths
        for k in range(len(widths) - 1):
            self.params[f"enc{k}_W"] = _fan_in_uniform(rng, widths[k], widths[k + 1])
            self.params[f"enc{k}_b"] = np.zeros(widths[k + 1])
        if config.head_hidden > 0:
            f, h, d = config.feature_dim, config.head_hidden, config.embed_dim
            self.params["head0_W"] = _fan_in_uniform(rng, f, h)
            self.params["head0_b"] = np.zeros(h)
            self.params["head1_W"] = _fan_in_uniform(rng, h, d)
            # Small nonzero bias: a sample whose head rectifiers are all dead
            # still gets a normalizable (nonzero) projection row, even when the
            # objective never trains the head (e.g. plain cross-entropy).
            self.params["head1_b"] = np.full(d, 0.01)

    @property
    def n_encoder_layers(self) -> int:
        return len(self.config.encoder_widths)

    def bump_version(self):
        """Invalidate outstanding tapes after any parameter update."""
        self.version += 1

    def forward(self, x: np.ndarray, mode: str = "eval", rng: np.random.Generator | None = None):
        """Returns (features, projections, tape). Dropout only in train mode."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.config.input_dim:
            raise ShapeError(f"input shape {x.shape} does not match input_dim {self.config.input_dim}")
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        train = mode == "train"
        drop = self.config.dropout_rate

        h = x
        enc_inputs, relu_masks, relu_pres, dropout_masks = [], [], [], []
        n = self.n_encoder_layers
        for k in range(n):
            enc_inputs.append(h)
            pre = h @ self.params[f"enc{k}_W"] + self.params[f"enc{k}_b"]
            if k < n - 1:
                mask = pre > 0
                relu_pres.append(pre)
                h = pre * mask
                relu_masks.append(mask)
                if train and drop > 0:
                    if rng is None:
                        raise InvalidState("train-mode forward needs an rng for dropout")
                    dmask = (rng.random(h.shape) >= drop) / (1.0 - drop)
                    h = h * dmask
                    dropout_masks.append(dmask)
                else:
                    dropout_masks.append(None)
            else:
                features = pre

        if self.config.head_hidden > 0:
            g_pre = features @ self.params["head0_W"] + self.params["head0_b"]
            head_mask = g_pre > 0
            relu_pres.append(g_pre)
            g = g_pre * head_mask
            p_raw = g @ self.params["head1_W"] + self.params["head1_b"]
            head_input, head_act = features, g
        else:
            p_raw = features
            head_input = head_act = head_mask = None

        projections = l2_normalize_rows(p_raw)
        tape = Tape(
            version=self.version,
            mode=mode,
            enc_inputs=enc_inputs,
            relu_masks=relu_masks,
            relu_pres=relu_pres,
            dropout_masks=dropout_masks,
            features=features,
            head_input=head_input,
            head_hidden_act=head_act,
            head_relu_mask=head_mask,
            p_raw=p_raw,
        )
        return features, projections, tape

    def encode(self, x: np.ndarray) -> EmbeddingBatch:
        """Eval-mode normalized projections; pure function of the inputs."""
        _, projections, _ = self.forward(x, mode="eval")
        return projections

    def backward(
        self,
        tape: Tape,
        grad_features: np.ndarray | None = None,
        grad_projections: np.ndarray | None = None,
    ) -> dict[str, np.ndarray]:
        """Exact chain rule; gradients arriving at both attachment points sum."""
        if tape.version != self.version:
            raise InvalidState("tape is stale: parameters changed since this forward")
        grads: dict[str, np.ndarray] = {}
        g_feat = np.zeros_like(tape.features)
        if grad_features is not None:
            g_feat = g_feat + grad_features
        if grad_projections is not None:
            g_praw = l2_normalize_backward(tape.p_raw, grad_projections)
            if self.config.head_hidden > 0:
                grads["head1_W"] = tape.head_hidden_act.T @ g_praw
                grads["head1_b"] = g_praw.sum(axis=0)
                g_act = (g_praw @ self.params["head1_W"].T) * tape.head_relu_mask
                grads["head0_W"] = tape.head_input.T @ g_act
                grads["head0_b"] = g_act.sum(axis=0)
                g_feat = g_feat + g_act @ self.params["head0_W"].T
            else:
                g_feat = g_feat + g_praw
        elif self.config.head_hidden > 0:
            for name in ("head0_W", "head0_b", "head1_W", "head1_b"):
                grads[name] = np.zeros_like(self.params[name])

        g = g_feat
        n = self.n_encoder_layers
        for k in reversed(range(n)):
            if k < n - 1:
                if tape.dropout_masks[k] is not None:
                    g = g * tape.dropout_masks[k]
                g = g * tape.relu_masks[k]
            grads[f"enc{k}_W"] = tape.enc_inputs[k].T @ g
            grads[f"enc{k}_b"] = g.sum(axis=0)
            if k > 0:
                g = g @ self.params[f"enc{k}_W"].T
        return grads


def _fan_in_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class AdamW:
    """Decoupled-weight-decay adaptive optimizer over a named parameter dict."""

    def __init__(self, lr=0.001, weight_decay=0.0001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], no_decay=()):
        """In-place update; parameters absent from grads are left untouched."""
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise NumericalFailure(f"non-finite gradient for parameter {name!r}")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, g in grads.items():
            p = params[name]
            if g.shape != p.shape:
                raise ShapeError(f"gradient shape {g.shape} vs parameter shape {p.shape} for {name!r}")
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m = self.m[name] = b1 * self.m[name] + (1 - b1) * g
            v = self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            m_hat = m / (1 - b1**self.t)
            v_hat = v / (1 - b2**self.t)
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            if self.weight_decay > 0 and name not in no_decay:
                p -= self.lr * self.weight_decay * p


CHECKPOINT_MAGIC = b"SILCKPT1"
CHECKPOINT_VERSION = 1


@dataclass
class Checkpoint:
    epoch: int
    seed: int
    opt_t: int
    params: dict[str, np.ndarray]
    opt_m: dict[str, np.ndarray] = field(default_factory=dict)
    opt_v: dict[str, np.ndarray] = field(default_factory=dict)


def save_checkpoint(path, params: dict[str, np.ndarray], opt: AdamW, epoch: int, seed: int):
    """Binary layout: magic, version u32, epoch u32, seed u64, opt step u64,
    array count u32, per-array header (name, ndim, dims), then float64-LE
    payload triples (param, first moment, second moment) in header order."""
    names = sorted(params)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IIQQ I", CHECKPOINT_VERSION, epoch, seed, opt.t, len(names)))
        for name in names:
            raw = name.encode("utf-8")
            arr = params[name]
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        for name in names:
            arr = params[name]
            m = opt.m.get(name, np.zeros_like(arr))
            v = opt.v.get(name, np.zeros_like(arr))
            for a in (arr, m, v):
                fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 8 or data[:8] != CHECKPOINT_MAGIC:
        raise CheckpointFormatError("bad magic tag; not a checkpoint file")
    off = 8
    try:
        version, epoch, seed, opt_t, n_arrays = struct.unpack_from("<IIQQ I", data, off)
    except struct.error as exc:
        raise TruncatedPayload("checkpoint header cut short") from exc
    off += struct.calcsize("<IIQQ I")
    if version != CHECKPOINT_VERSION:
        raise CheckpointFormatError(f"unrecognized checkpoint version {version}")
    headers = []
    try:
        for _ in range(n_arrays):
            (name_len,) = struct.unpack_from("<H", data, off)
            off += 2
            name = data[off : off + name_len].decode("utf-8")
            off += name_len
            (ndim,) = struct.unpack_from("<B", data, off)
            off += 1
            shape = struct.unpack_from(f"<{ndim}I", data, off)
            off += 4 * ndim
            headers.append((name, shape))
    except (struct.error, UnicodeDecodeError) as exc:
        raise TruncatedPayload("checkpoint header cut short") from exc

    ckpt = Checkpoint(epoch=epoch, seed=seed, opt_t=opt_t, params={})
    for name, shape in headers:
        n_bytes = 8 * int(np.prod(shape, dtype=np.int64)) if shape else 8
        arrays = []
        for _ in range(3):
            chunk = data[off : off + n_bytes]
            if len(chunk) < n_bytes:
                raise TruncatedPayload(f"payload for {name!r} cut short")
            arrays.append(np.frombuffer(chunk, dtype="<f8").astype(np.float64).reshape(shape))
            off += n_bytes
        ckpt.params[name] = arrays[0]
        ckpt.opt_m[name] = arrays[1]
        ckpt.opt_v[name] = arrays[2]
    return ckpt
