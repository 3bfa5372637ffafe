"""Bag-of-embeddings encoder mapping sparse inputs to the unit sphere.

The encoder sums token embeddings weighted by feature values and normalizes
the result, so cosine similarity between any two outputs is a plain dot
product. This module is the reference implementation of the encoder
interface (embed, embed_batch, loss_and_grad plus the checkpoint format);
heavier architectures can replace it behind the same call signatures since
the rest of the toolkit only ever consumes unit-norm embedding arrays.

Training uses a margin (triplet) loss over (anchor, positive, negative-set)
triples. The plain hinge is the default objective; the squared hinge is a
smooth variant whose analytic gradient, including the normalization
Jacobian, is verified against central finite differences in the tests.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .dataset import SparseVector
from .errors import DegenerateInput, FormatError, NumericsError

__all__ = [
    "EncoderParams",
    "init_params",
    "embed",
    "embed_batch",
    "loss_and_grad",
    "save_params",
    "load_params",
]

ZERO_NORM_EPS = 1e-12

_MAGIC = b"XCMINEMB"
_VERSION = 1


@dataclass
class EncoderParams:
    """Trainable token-embedding table, one row per vocabulary entry."""

    table: np.ndarray

    def __post_init__(self):
        self.table = np.asarray(self.table, dtype=np.float64)
        if self.table.ndim != 2 or self.table.shape[1] < 2:
            raise FormatError(f"embedding table must be V x D with D >= 2, got {self.table.shape}")
        if not np.all(np.isfinite(self.table)):
            raise NumericsError("embedding table contains non-finite entries")

    @property
    def vocab_size(self) -> int:
        return self.table.shape[0]

    @property
    def dim(self) -> int:
        return self.table.shape[1]


def init_params(vocab_size: int, dim: int, seed: int = 0) -> EncoderParams:
    """Seeded i.i.d. uniform init in [-1/sqrt(D), 1/sqrt(D)]."""
    rng = np.random.default_rng(seed)
    scale = 1.0 / np.sqrt(dim)
    return EncoderParams(rng.uniform(-scale, scale, size=(vocab_size, dim)))


def _raw_sum(params: EncoderParams, x: SparseVector) -> np.ndarray:
    if len(x) == 0:
        raise DegenerateInput("cannot embed an empty sparse vector")
    if x.dim != params.vocab_size:
        raise FormatError(f"input dim {x.dim} does not match vocabulary {params.vocab_size}")
    return params.table[x.indices].T @ x.values


def embed(params: EncoderParams, x: SparseVector) -> np.ndarray:
    """Embed one sparse input as a unit vector."""
    raw = _raw_sum(params, x)
    norm = np.linalg.norm(raw)
    if norm <= ZERO_NORM_EPS:
        raise DegenerateInput(f"pre-normalization norm {norm} below {ZERO_NORM_EPS}")
    return raw / norm


def embed_batch(params: EncoderParams, xs) -> np.ndarray:
    """Embed a sequence of sparse inputs; row order follows input order."""
    out = np.empty((len(xs), params.dim))
    for i, x in enumerate(xs):
        try:
            out[i] = embed(params, x)
        except DegenerateInput as exc:
            raise DegenerateInput(f"input {i}: {exc}") from exc
    return out


def loss_and_grad(params, triples, gamma: float, loss_kind: str = "hinge"):
    """Margin loss and its gradient w.r.t. the embedding table.

    ``triples`` is a sequence of (anchor, positive, negatives) where the
    negatives entry is a sequence of SparseVectors (possibly empty). Each
    (anchor, positive, negative) term contributes
    ``max(0, s_neg - s_pos + gamma)`` for the hinge and its square for
    "squared_hinge". The loss is the sum over all terms; the gradient flows
    through both sides of every dot product and through the normalization
    of every embedding (shared table, Siamese style).
    """
    if gamma < 0:
        raise NumericsError(f"margin must be non-negative, got {gamma}")
    if loss_kind not in ("hinge", "squared_hinge"):
        raise NumericsError(f"unknown loss kind {loss_kind!r}")
    squared = loss_kind == "squared_hinge"

    # Deduplicate by object identity so shared inputs (the same label as a
    # negative for many anchors, say) are embedded and backpropagated once.
    uniq: dict[int, int] = {}
    vectors: list[SparseVector] = []

    def slot(v: SparseVector) -> int:
        key = id(v)
        if key not in uniq:
            uniq[key] = len(vectors)
            vectors.append(v)
        return uniq[key]

    spec = []
    for anchor, positive, negatives in triples:
        spec.append((slot(anchor), slot(positive), [slot(n) for n in negatives]))

    raws = [_raw_sum(params, v) for v in vectors]
    norms = np.array([np.linalg.norm(r) for r in raws])
    bad = np.nonzero(norms <= ZERO_NORM_EPS)[0]
    if bad.size:
        raise DegenerateInput(f"zero-norm embedding in batch (unique input {bad[0]})")
    embs = np.stack(raws) / norms[:, None]

    loss = 0.0
    grad_emb = np.zeros_like(embs)
    for ia, ip, ins in spec:
        if not ins:
            continue
        e_a, e_p = embs[ia], embs[ip]
        s_pos = float(e_a @ e_p)
        s_neg = embs[ins] @ e_a
        hinge = s_neg - s_pos + gamma
        active = hinge > 0
        if not np.any(active):
            continue
        h = hinge[active]
        if squared:
            loss += float(np.sum(h * h))
            coeff = 2.0 * h
        else:
            loss += float(np.sum(h))
            coeff = np.ones_like(h)
        act_idx = [ins[j] for j in np.nonzero(active)[0]]
        total = float(np.sum(coeff))
        grad_emb[ia] += coeff @ embs[act_idx] - total * e_p
        grad_emb[ip] += -total * e_a
        for j, c in zip(act_idx, coeff):
            grad_emb[j] += c * e_a

    grad = np.zeros_like(params.table)
    for k, v in enumerate(vectors):
        g = grad_emb[k]
        if not g.any():
            continue
        # Jacobian of x -> x/|x|: (I - e e^T) / |x|.
        g_raw = (g - float(embs[k] @ g) * embs[k]) / norms[k]
        np.add.at(grad, v.indices, np.outer(v.values, g_raw))

    if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
        raise NumericsError("non-finite loss or gradient")
    return loss, grad


def save_params(path, params: EncoderParams, magic: bytes = _MAGIC):
    """Write a checkpoint: magic, version, rows, cols, then f32 data."""
    table = np.ascontiguousarray(params.table, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<8sIQQ", magic, _VERSION, table.shape[0], table.shape[1]))
        fh.write(table.tobytes())


def load_params(path, magic: bytes = _MAGIC) -> EncoderParams:
    with open(path, "rb") as fh:
        header = fh.read(struct.calcsize("<8sIQQ"))
        got_magic, version, rows, cols = struct.unpack("<8sIQQ", header)
        if got_magic != magic:
            raise FormatError(f"{path}: bad magic {got_magic!r}, expected {magic!r}")
        if version != _VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        payload = fh.read()
    if len(payload) % 4:
        raise FormatError(f"{path}: truncated payload ({len(payload)} bytes)")
    data = np.frombuffer(payload, dtype="<f4")
    if data.size != rows * cols:
        raise FormatError(f"{path}: expected {rows * cols} floats, found {data.size}")
    return EncoderParams(data.reshape(rows, cols).astype(np.float64))
