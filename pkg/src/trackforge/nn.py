"""Minimal MLP kernel: tanh hidden layers, orthogonal init, exact reverse-mode
gradients, a diagonal-Gaussian policy head, Adam with global-norm clipping,
and a binary checkpoint container.

Everything is float64 and operates on plain numpy arrays, which keeps the
finite-difference checks and bit-level determinism straightforward.
"""
from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)
CHECKPOINT_MAGIC = b"TRKFNN\x00\x01"
CHECKPOINT_VERSION = 1
ACTIVATION_TANH = 0


class NonFiniteGradientError(RuntimeError):
    """A gradient tensor contains NaN or inf; the update was aborted."""


@dataclass
class MlpParams:
    weights: list[np.ndarray]            # each (out, in)
    biases: list[np.ndarray]             # each (out,)
    log_std: np.ndarray | None = None    # (action_dim,) for policy networks

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights],
                         [b.copy() for b in self.biases],
                         None if self.log_std is None else self.log_std.copy())


@dataclass
class GradientSet:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    log_std: np.ndarray | None = None


@dataclass
class ForwardCache:
    inputs: list[np.ndarray]             # input to each linear layer, 2-D
    hidden: list[np.ndarray]             # post-tanh activations, 2-D
    squeeze: bool                        # original input was a single vector


@dataclass
class AdamState:
    m_weights: list[np.ndarray]
    v_weights: list[np.ndarray]
    m_biases: list[np.ndarray]
    v_biases: list[np.ndarray]
    m_log_std: np.ndarray | None
    v_log_std: np.ndarray | None
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def orthogonal(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    """Orthogonal (rows x cols) matrix: QR of a Gaussian draw, sign-corrected
    so the factorization is unique; orthonormal rows when rows <= cols,
    orthonormal columns otherwise."""
    a = rng.normal(size=(max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    return q if rows >= cols else q.T


def init_mlp(layer_sizes: list[int], output_gain: float, seed,
             hidden_gain: float = math.sqrt(2.0),
             log_std_init: float | None = None) -> MlpParams:
    """Orthogonally initialized MLP; pass log_std_init to attach a policy head."""
    if len(layer_sizes) < 2 or any(s < 1 for s in layer_sizes):
        raise ValueError(f"invalid layer sizes {layer_sizes}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    last = len(layer_sizes) - 2
    for k, (n_in, n_out) in enumerate(zip(layer_sizes[:-1], layer_sizes[1:])):
        gain = output_gain if k == last else hidden_gain
        weights.append(gain * orthogonal(n_out, n_in, rng))
        biases.append(np.zeros(n_out))
    log_std = None
    if log_std_init is not None:
        log_std = np.full(layer_sizes[-1], float(log_std_init))
    return MlpParams(weights=weights, biases=biases, log_std=log_std)


def forward(params: MlpParams, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """tanh MLP forward pass; accepts a single vector or a (batch, in) matrix."""
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    h = x[None, :] if squeeze else x
    if h.shape[1] != params.weights[0].shape[1]:
        raise ValueError(f"input dim {h.shape[1]} != expected "
                         f"{params.weights[0].shape[1]}")
    inputs, hidden = [], []
    n = len(params.weights)
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        z = h @ w.T + b
        if k < n - 1:
            h = np.tanh(z)
            hidden.append(h)
        else:
            h = z
    out = h[0] if squeeze else h
    return out, ForwardCache(inputs=inputs, hidden=hidden, squeeze=squeeze)


def backward(params: MlpParams, cache: ForwardCache,
             output_grad: np.ndarray) -> GradientSet:
    """Exact gradients of sum(output * output_grad) w.r.t. weights and biases.

    output_grad matches the forward output shape; batched rows accumulate.
    The log_std slot is zero-filled here and populated by the policy-loss path.
    """
    g = np.asarray(output_grad, dtype=float)
    if cache.squeeze:
        g = g[None, :]
    if g.shape != (cache.inputs[0].shape[0], params.weights[-1].shape[0]):
        raise ValueError(f"output_grad shape {g.shape} does not match forward")
    n = len(params.weights)
    d_weights = [None] * n
    d_biases = [None] * n
    for k in range(n - 1, -1, -1):
        d_weights[k] = g.T @ cache.inputs[k]
        d_biases[k] = g.sum(axis=0)
        if k > 0:
            g = (g @ params.weights[k]) * (1.0 - cache.hidden[k - 1] ** 2)
    log_std = None if params.log_std is None else np.zeros_like(params.log_std)
    return GradientSet(weights=d_weights, biases=d_biases, log_std=log_std)


def gaussian_sample(mean: np.ndarray, log_std: np.ndarray,
                    rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Sample from N(mean, diag(exp(log_std))^2) with its log density.

    Works on a single mean vector or a batch; the sample is not squashed,
    range clamping is the environment's job.
    """
    mean = np.asarray(mean, dtype=float)
    std = np.exp(log_std)
    action = mean + std * rng.standard_normal(mean.shape)
    log_prob, _ = gaussian_log_prob_and_entropy(mean, log_std, action)
    return action, log_prob


def gaussian_log_prob_and_entropy(mean: np.ndarray, log_std: np.ndarray,
                                  action: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Diagonal-Gaussian log density of the action and distribution entropy."""
    mean = np.asarray(mean, dtype=float)
    action = np.asarray(action, dtype=float)
    std = np.exp(log_std)
    z = (action - mean) / std
    log_prob = (-0.5 * z ** 2 - log_std - 0.5 * LOG_2PI).sum(axis=-1)
    entropy = float((log_std + 0.5 * (1.0 + LOG_2PI)).sum())
    if mean.ndim > 1:
        entropy = np.full(mean.shape[0], entropy)
    return log_prob, entropy


def init_adam(params: MlpParams, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> AdamState:
    return AdamState(
        m_weights=[np.zeros_like(w) for w in params.weights],
        v_weights=[np.zeros_like(w) for w in params.weights],
        m_biases=[np.zeros_like(b) for b in params.biases],
        v_biases=[np.zeros_like(b) for b in params.biases],
        m_log_std=None if params.log_std is None else np.zeros_like(params.log_std),
        v_log_std=None if params.log_std is None else np.zeros_like(params.log_std),
        step=0, beta1=beta1, beta2=beta2, eps=eps)


def _grad_tensors(params: MlpParams, grads: GradientSet):
    pairs = []
    for k in range(len(params.weights)):
        pairs.append((f"W{k}", params.weights[k], grads.weights[k]))
        pairs.append((f"b{k}", params.biases[k], grads.biases[k]))
    if params.log_std is not None and grads.log_std is not None:
        pairs.append(("log_std", params.log_std, grads.log_std))
    return pairs


def global_grad_norm(grads: GradientSet) -> float:
    total = 0.0
    for g in grads.weights + grads.biases + ([grads.log_std] if grads.log_std is not None else []):
        total += float((g * g).sum())
    return math.sqrt(total)


def adam_update(params: MlpParams, grads: GradientSet, state: AdamState,
                lr: float, max_grad_norm: float) -> tuple[MlpParams, AdamState]:
    """Clip the global gradient norm, then apply one bias-corrected Adam step.

    Mutates params and state in place and returns them for chaining.
    """
    for name, _, g in _grad_tensors(params, grads):
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient in {name}")
    norm = global_grad_norm(grads)
    scale = 1.0 if norm <= max_grad_norm or norm == 0.0 else max_grad_norm / norm

    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1 ** state.step
    bias2 = 1.0 - b2 ** state.step

    def update(p, g, m, v):
        g = g * scale
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / bias1) / (np.sqrt(v / bias2) + state.eps)

    for k in range(len(params.weights)):
        update(params.weights[k], grads.weights[k], state.m_weights[k], state.v_weights[k])
        update(params.biases[k], grads.biases[k], state.m_biases[k], state.v_biases[k])
    if params.log_std is not None and grads.log_std is not None:
        update(params.log_std, grads.log_std, state.m_log_std, state.v_log_std)
    return params, state


@dataclass
class CheckpointHeader:
    layer_sizes: list[int]
    activation: int
    hidden_gain: float
    output_gain: float
    has_log_std: bool


class CheckpointError(ValueError):
    """Checkpoint file is corrupt, truncated, or has an unsupported version."""


def save_checkpoint(params: MlpParams, path, hidden_gain: float = math.sqrt(2.0),
                    output_gain: float = 1.0) -> None:
    """Binary container: header, row-major float64 tensors in declaration
    order, log_std, then a trailing 64-bit digest of everything before it."""
    sizes = params.layer_sizes
    head = bytearray()
    head += CHECKPOINT_MAGIC
    head += struct.pack("<II", CHECKPOINT_VERSION, ACTIVATION_TANH)
    head += struct.pack("<dd", hidden_gain, output_gain)
    head += struct.pack("<I", len(sizes))
    head += struct.pack(f"<{len(sizes)}I", *sizes)
    head += struct.pack("<I", 1 if params.log_std is not None else 0)
    body = bytearray(head)
    for w, b in zip(params.weights, params.biases):
        body += np.ascontiguousarray(w, dtype="<f8").tobytes()
        body += np.ascontiguousarray(b, dtype="<f8").tobytes()
    if params.log_std is not None:
        body += np.ascontiguousarray(params.log_std, dtype="<f8").tobytes()
    digest = hashlib.blake2b(bytes(body), digest_size=8).digest()
    with open(path, "wb") as f:
        f.write(bytes(body))
        f.write(digest)


def load_checkpoint(path) -> tuple[MlpParams, CheckpointHeader]:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < len(CHECKPOINT_MAGIC) + 8:
        raise CheckpointError("file too short to be a checkpoint")
    payload, digest = blob[:-8], blob[-8:]
    if hashlib.blake2b(payload, digest_size=8).digest() != digest:
        raise CheckpointError("checksum mismatch (corrupt or truncated file)")
    if payload[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError("bad magic bytes")
    off = len(CHECKPOINT_MAGIC)
    version, activation = struct.unpack_from("<II", payload, off); off += 8
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    hidden_gain, output_gain = struct.unpack_from("<dd", payload, off); off += 16
    (n_sizes,) = struct.unpack_from("<I", payload, off); off += 4
    sizes = list(struct.unpack_from(f"<{n_sizes}I", payload, off)); off += 4 * n_sizes
    (has_log_std,) = struct.unpack_from("<I", payload, off); off += 4

    weights, biases = [], []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        w = np.frombuffer(payload, dtype="<f8", count=n_out * n_in, offset=off)
        off += 8 * n_out * n_in
        weights.append(w.reshape(n_out, n_in).copy())
        b = np.frombuffer(payload, dtype="<f8", count=n_out, offset=off)
        off += 8 * n_out
        biases.append(b.copy())
    log_std = None
    if has_log_std:
        log_std = np.frombuffer(payload, dtype="<f8", count=sizes[-1], offset=off).copy()
        off += 8 * sizes[-1]
    if off != len(payload):
        raise CheckpointError("trailing bytes after tensors")
    header = CheckpointHeader(layer_sizes=sizes, activation=activation,
                              hidden_gain=hidden_gain, output_gain=output_gain,
                              has_log_std=bool(has_log_std))
    return MlpParams(weights=weights, biases=biases, log_std=log_std), header
