"""Sparse-input neural classifier with hand-rolled backpropagation.

Architecture: an embedding table over the code vocabulary, a mean pool
over each example's code set (zero vector when the set is empty), the
4-dim demographic vector concatenated onto the pooled embedding, two
ReLU feedforward layers, and a single sigmoid output unit.

Gradients are exact analytic derivatives of the mean binary cross-entropy
over a batch; the mean pool's chain rule spreads each example's pooled
gradient over its referenced embedding rows scaled by 1/|code set|.
Updates use adaptive moment estimation (decay 0.9/0.999, eps 1e-8).
Everything is float64 and deterministic in the seed.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field, asdict

import numpy as np

from . import rng as rngmod
from .errors import ConfigError, DataError, DegenerateCohortError
from .features import DEMOGRAPHICS_DIM, FeatureVector, Vocabulary

_MAGIC = b"SMSC"
_FORMAT_VERSION = 1

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

_PARAM_FIELDS = ("embedding", "w1", "b1", "w2", "b2", "w_out", "b_out")


class ModelVersionError(DataError):
    """Model file written by an incompatible format version."""


class ModelCorruptError(DataError):
    """Model file truncated or failing its integrity check."""


class FingerprintMismatchError(DataError):
    """Model parameters bound to a different vocabulary."""


@dataclass
class Hyperparams:
    embedding_dim: int = 300
    hidden1: int = 128
    hidden2: int = 64
    learning_rate: float = 1e-3
    batch_size: int = 256
    max_epochs: int = 50
    patience: int = 5
    seed: int = 0

    def validate(self) -> None:
        for name in ("embedding_dim", "hidden1", "hidden2", "batch_size", "max_epochs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"hyperparameter {name} must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.patience < 0:
            raise ConfigError("patience must be >= 0")


@dataclass
class ModelParams:
    embedding: np.ndarray  # (V, d)
    w1: np.ndarray  # (d + 4, h1)
    b1: np.ndarray  # (h1,)
    w2: np.ndarray  # (h1, h2)
    b2: np.ndarray  # (h2,)
    w_out: np.ndarray  # (h2,)
    b_out: np.ndarray  # (1,)
    vocab_fingerprint: str = ""

    @property
    def vocab_size(self) -> int:
        return self.embedding.shape[0]

    @property
    def embedding_dim(self) -> int:
        return self.embedding.shape[1]

    @property
    def hidden1(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden2(self) -> int:
        return self.w2.shape[1]

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in _PARAM_FIELDS}

    def copy(self) -> "ModelParams":
        return ModelParams(
            *(getattr(self, name).copy() for name in _PARAM_FIELDS),
            vocab_fingerprint=self.vocab_fingerprint,
        )


@dataclass
class Gradients:
    embedding: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w_out: np.ndarray
    b_out: np.ndarray

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in _PARAM_FIELDS}


@dataclass
class OptimizerState:
    first_moment: dict[str, np.ndarray]
    second_moment: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, m: ModelParams) -> "OptimizerState":
        return cls(
            first_moment={k: np.zeros_like(v) for k, v in m.arrays().items()},
            second_moment={k: np.zeros_like(v) for k, v in m.arrays().items()},
        )


@dataclass
class TrainingLog:
    train_loss: list[float] = field(default_factory=list)
    val_auc: list[float] = field(default_factory=list)
    best_epoch: int = 0
    best_val_auc: float = float("-inf")
    epochs_run: int = 0


def init_model(vocab_size: int, hp: Hyperparams, vocab_fingerprint: str = "") -> ModelParams:
    """Fresh parameters: uniform(-0.05, 0.05) embeddings, He-scaled dense
    weights (variance 2/fan_in, ReLU-appropriate), zero biases."""
    if vocab_size < 1:
        raise ConfigError("vocabulary size must be >= 1")
    hp.validate()
    gen = rngmod.stream(hp.seed, "init")
    d, h1, h2 = hp.embedding_dim, hp.hidden1, hp.hidden2
    fan_in = d + DEMOGRAPHICS_DIM
    return ModelParams(
        embedding=gen.uniform(-0.05, 0.05, size=(vocab_size, d)),
        w1=gen.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, h1)),
        b1=np.zeros(h1),
        w2=gen.normal(0.0, np.sqrt(2.0 / h1), size=(h1, h2)),
        b2=np.zeros(h2),
        w_out=gen.normal(0.0, np.sqrt(2.0 / h2), size=h2),
        b_out=np.zeros(1),
        vocab_fingerprint=vocab_fingerprint,
    )


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _pool(embedding: np.ndarray, x: FeatureVector) -> np.ndarray:
    if x.code_indices.size == 0:
        return np.zeros(embedding.shape[1])
    idx = np.sort(x.code_indices)  # fixed summation order: permutation-proof
    if idx[-1] >= embedding.shape[0] or idx[0] < 0:
        raise DataError(f"feature index {int(idx[-1])} out of range for V={embedding.shape[0]}")
    return embedding[idx].mean(axis=0)


def _forward_batch(m: ModelParams, batch: list[FeatureVector]):
    pooled = np.stack([_pool(m.embedding, x) for x in batch])
    demo = np.stack([x.demographics for x in batch])
    inputs = np.concatenate([pooled, demo], axis=1)
    z1 = inputs @ m.w1 + m.b1
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ m.w2 + m.b2
    a2 = np.maximum(z2, 0.0)
    z3 = a2 @ m.w_out + m.b_out[0]
    p = _sigmoid(z3)
    return p, (inputs, z1, a1, z2, a2)


def forward(m: ModelParams, x: FeatureVector) -> float:
    """Probability of the positive class for one example."""
    p, _ = _forward_batch(m, [x])
    out = float(p[0])
    if not np.isfinite(out):
        raise DataError("non-finite model output")
    return out


def score_batch(m: ModelParams, batch: list[FeatureVector]) -> np.ndarray:
    if not batch:
        return np.zeros(0)
    p, _ = _forward_batch(m, batch)
    if not np.all(np.isfinite(p)):
        raise DataError("non-finite model output")
    return p


def bce_loss(p: float, y: int) -> float:
    """Binary cross-entropy with probabilities clamped away from 0 and 1."""
    p = min(max(p, 1e-12), 1.0 - 1e-12)
    return -(y * np.log(p) + (1 - y) * np.log1p(-p))


def _batch_loss(p: np.ndarray, y: np.ndarray) -> float:
    q = np.clip(p, 1e-12, 1.0 - 1e-12)
    return float(np.mean(-(y * np.log(q) + (1 - y) * np.log1p(-q))))


def backward(
    m: ModelParams, batch: list[FeatureVector], labels: np.ndarray
) -> tuple[Gradients, float]:
    """Analytic gradients of the mean BCE loss over the batch."""
    if not batch:
        raise DataError("backward requires a non-empty batch")
    y = np.asarray(labels, dtype=np.float64)
    p, (inputs, z1, a1, z2, a2) = _forward_batch(m, batch)
    n = len(batch)
    loss = _batch_loss(p, y)

    dz3 = (p - y) / n  # d(mean BCE)/dz3 through the sigmoid
    d_w_out = a2.T @ dz3
    d_b_out = np.array([dz3.sum()])
    da2 = np.outer(dz3, m.w_out)
    dz2 = da2 * (z2 > 0.0)
    d_w2 = a1.T @ dz2
    d_b2 = dz2.sum(axis=0)
    da1 = dz2 @ m.w2.T
    dz1 = da1 * (z1 > 0.0)
    d_w1 = inputs.T @ dz1
    d_b1 = dz1.sum(axis=0)
    d_inputs = dz1 @ m.w1.T

    d_embedding = np.zeros_like(m.embedding)
    d_pooled = d_inputs[:, : m.embedding_dim]
    rows = []
    index_runs = []
    for i, x in enumerate(batch):
        k = x.code_indices.size
        if k == 0:
            continue
        index_runs.append(np.sort(x.code_indices))
        rows.append(np.repeat(d_pooled[i : i + 1] / k, k, axis=0))
    if rows:
        np.add.at(d_embedding, np.concatenate(index_runs), np.concatenate(rows))

    grads = Gradients(d_embedding, d_w1, d_b1, d_w2, d_b2, d_w_out, d_b_out)
    return grads, loss


def adam_step(m: ModelParams, grads: Gradients, state: OptimizerState, lr: float) -> None:
    """In-place adaptive-moment update with bias correction."""
    state.step += 1
    t = state.step
    scale1 = 1.0 - ADAM_BETA1**t
    scale2 = 1.0 - ADAM_BETA2**t
    params = m.arrays()
    grad_arrays = grads.arrays()
    for name in _PARAM_FIELDS:
        g = grad_arrays[name]
        mom = state.first_moment[name]
        vel = state.second_moment[name]
        mom *= ADAM_BETA1
        mom += (1.0 - ADAM_BETA1) * g
        vel *= ADAM_BETA2
        vel += (1.0 - ADAM_BETA2) * np.square(g)
        params[name] -= lr * (mom / scale1) / (np.sqrt(vel / scale2) + ADAM_EPS)


def train(
    m: ModelParams,
    train_features: list[FeatureVector],
    train_labels: np.ndarray,
    val_features: list[FeatureVector],
    val_labels: np.ndarray,
    hp: Hyperparams,
    eval_fn,
) -> tuple[ModelParams, TrainingLog]:
    """Minibatch training with early stopping on validation AUC.

    The input parameters are not mutated; the returned model is the best
    epoch's snapshot. Shuffling is deterministic in (seed, epoch), so a
    rerun with identical inputs reproduces the log bit for bit.
    """
    hp.validate()
    if not train_features or not val_features:
        raise DegenerateCohortError("training and validation sets must be non-empty")
    val_y = np.asarray(val_labels, dtype=np.float64)
    if len(set(val_y.tolist())) < 2:
        raise DegenerateCohortError("validation set is single-class; cannot track AUC")
    train_y = np.asarray(train_labels, dtype=np.float64)

    model = m.copy()
    state = OptimizerState.zeros_like(model)
    log = TrainingLog()
    best = model.copy()
    since_improvement = 0
    n = len(train_features)
    for epoch in range(1, hp.max_epochs + 1):
        order = rngmod.stream(hp.seed, "shuffle", epoch).permutation(n)
        total_loss = 0.0
        for lo in range(0, n, hp.batch_size):
            sel = order[lo : lo + hp.batch_size]
            batch = [train_features[i] for i in sel]
            grads, loss = backward(model, batch, train_y[sel])
            adam_step(model, grads, state, hp.learning_rate)
            total_loss += loss * len(sel)
        scores = score_batch(model, val_features)
        auc = float(eval_fn(scores, val_y))
        log.train_loss.append(total_loss / n)
        log.val_auc.append(auc)
        log.epochs_run = epoch
        if auc > log.best_val_auc:
            log.best_val_auc = auc
            log.best_epoch = epoch
            best = model.copy()
            since_improvement = 0
        else:
            since_improvement += 1
        if since_improvement >= hp.patience:
            break
    return best, log


def transfer_init(
    pre: ModelParams, pre_vocab: Vocabulary, target_vocab: Vocabulary, hp: Hyperparams
) -> ModelParams:
    """Re-seat a trained model onto a new vocabulary.

    Embedding rows for codes present in both vocabularies are copied; rows
    for target-only codes are freshly initialized. Dense layers transfer
    verbatim: mean pooling keeps their input width independent of V.
    """
    if (pre.embedding_dim, pre.hidden1, pre.hidden2) != (
        hp.embedding_dim,
        hp.hidden1,
        hp.hidden2,
    ):
        raise ConfigError(
            f"transfer dimension mismatch: pretrained (d={pre.embedding_dim}, "
            f"h1={pre.hidden1}, h2={pre.hidden2}) vs requested "
            f"(d={hp.embedding_dim}, h1={hp.hidden1}, h2={hp.hidden2})"
        )
    src_index = pre_vocab.index
    gen = rngmod.stream(hp.seed, "transfer")
    embedding = np.empty((len(target_vocab), pre.embedding_dim))
    for i, code in enumerate(target_vocab.entries):
        j = src_index.get(code)
        if j is None:
            embedding[i] = gen.uniform(-0.05, 0.05, size=pre.embedding_dim)
        else:
            embedding[i] = pre.embedding[j]
    return ModelParams(
        embedding=embedding,
        w1=pre.w1.copy(),
        b1=pre.b1.copy(),
        w2=pre.w2.copy(),
        b2=pre.b2.copy(),
        w_out=pre.w_out.copy(),
        b_out=pre.b_out.copy(),
        vocab_fingerprint=target_vocab.fingerprint(),
    )


def check_fingerprint(m: ModelParams, vocab: Vocabulary) -> None:
    """Refuse to score a model against a vocabulary it was not built on."""
    if m.vocab_fingerprint and m.vocab_fingerprint != vocab.fingerprint():
        raise FingerprintMismatchError(
            "model was trained against a different vocabulary "
            f"(fingerprint {m.vocab_fingerprint[:12]}... != {vocab.fingerprint()[:12]}...)"
        )


def save_model(m: ModelParams, hp: Hyperparams, path: str) -> None:
    """Versioned container: magic, format version, JSON header (shapes,
    hyperparams, vocab fingerprint), float64 little-endian arrays in fixed
    order, then a SHA-256 of everything preceding it."""
    header = {
        "format_version": _FORMAT_VERSION,
        "V": m.vocab_size,
        "d": m.embedding_dim,
        "h1": m.hidden1,
        "h2": m.hidden2,
        "hyperparams": asdict(hp),
        "vocab_fingerprint": m.vocab_fingerprint,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    blob = bytearray()
    blob += _MAGIC
    blob += struct.pack("<I", _FORMAT_VERSION)
    blob += struct.pack("<Q", len(header_bytes))
    blob += header_bytes
    for name in _PARAM_FIELDS:
        arr = np.ascontiguousarray(getattr(m, name), dtype="<f8")
        blob += arr.tobytes(order="C")
    blob += hashlib.sha256(bytes(blob)).digest()
    with open(path, "wb") as fh:
        fh.write(bytes(blob))


def _expected_shapes(v: int, d: int, h1: int, h2: int) -> dict[str, tuple[int, ...]]:
    return {
        "embedding": (v, d),
        "w1": (d + DEMOGRAPHICS_DIM, h1),
        "b1": (h1,),
        "w2": (h1, h2),
        "b2": (h2,),
        "w_out": (h2,),
        "b_out": (1,),
    }


def load_model(path: str) -> tuple[ModelParams, Hyperparams]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(_MAGIC) + 4 + 8 + 32 or blob[: len(_MAGIC)] != _MAGIC:
        raise ModelCorruptError(f"{path}: not a model file")
    digest = blob[-32:]
    body = blob[:-32]
    if hashlib.sha256(body).digest() != digest:
        raise ModelCorruptError(f"{path}: integrity check failed (truncated or corrupted)")
    offset = len(_MAGIC)
    (version,) = struct.unpack_from("<I", body, offset)
    offset += 4
    if version != _FORMAT_VERSION:
        raise ModelVersionError(f"{path}: format version {version}, expected {_FORMAT_VERSION}")
    (header_len,) = struct.unpack_from("<Q", body, offset)
    offset += 8
    try:
        header = json.loads(body[offset : offset + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelCorruptError(f"{path}: unreadable header") from exc
    offset += header_len
    shapes = _expected_shapes(header["V"], header["d"], header["h1"], header["h2"])
    arrays: dict[str, np.ndarray] = {}
    for name in _PARAM_FIELDS:
        shape = shapes[name]
        count = int(np.prod(shape))
        nbytes = count * 8
        if offset + nbytes > len(body):
            raise ModelCorruptError(f"{path}: parameter block {name} truncated")
        arrays[name] = (
            np.frombuffer(body, dtype="<f8", count=count, offset=offset)
            .astype(np.float64)
            .reshape(shape)
        )
        offset += nbytes
    if offset != len(body):
        raise ModelCorruptError(f"{path}: {len(body) - offset} trailing bytes")
    hp = Hyperparams(**header["hyperparams"])
    model = ModelParams(**arrays, vocab_fingerprint=header["vocab_fingerprint"])
    if not all(np.all(np.isfinite(a)) for a in arrays.values()):
        raise ModelCorruptError(f"{path}: non-finite parameter values")
    return model, hp
