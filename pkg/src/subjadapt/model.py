"""GRU encoder, embedding layer and linear classifier.

The network is ``logits = h(g(f(x)))`` where ``f`` is a single-layer GRU that
keeps only its last hidden state, ``g`` is a fully connected layer followed by
a leaky ReLU, and ``h`` is a fully connected layer producing raw logits.
Inputs are ``D x T`` arrays whose column ``t`` is the channel vector at time
``t``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import diffcore as dc
from . import kernels
from .errors import DimensionError, FormatError, LengthError, NumericError

LEAKY_SLOPE = 0.2

GATES = ("r", "u", "c")
PARAM_NAMES = (
    "W_r", "U_r", "b_r",
    "W_u", "U_u", "b_u",
    "W_c", "U_c", "b_c",
    "emb_W", "emb_b",
    "cls_W", "cls_b",
)


@dataclass(frozen=True)
class ModelDims:
    d_in: int = 128
    t_len: int = 160
    d_seq: int = 128
    d_emb: int = 128
    n_classes: int = 40

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not isinstance(v, (int, np.integer)) or v <= 0:
                raise DimensionError(f"ModelDims.{f.name} must be a positive integer, got {v!r}")

    def as_tuple(self) -> tuple[int, ...]:
        return (self.d_in, self.t_len, self.d_seq, self.d_emb, self.n_classes)

    def shapes(self) -> dict[str, tuple[int, ...]]:
        D, H, E, K = self.d_in, self.d_seq, self.d_emb, self.n_classes
        out = {}
        for g in GATES:
            out[f"W_{g}"] = (H, D)
            out[f"U_{g}"] = (H, H)
            out[f"b_{g}"] = (H,)
        out.update(emb_W=(E, H), emb_b=(E,), cls_W=(K, E), cls_b=(K,))
        return {name: out[name] for name in PARAM_NAMES}


@dataclass
class GruParams:
    W_r: np.ndarray
    U_r: np.ndarray
    b_r: np.ndarray
    W_u: np.ndarray
    U_u: np.ndarray
    b_u: np.ndarray
    W_c: np.ndarray
    U_c: np.ndarray
    b_c: np.ndarray

    def stacked(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Gate weights stacked in reset, update, candidate order."""
        W = np.concatenate([self.W_r, self.W_u, self.W_c])
        U = np.concatenate([self.U_r, self.U_u, self.U_c])
        b = np.concatenate([self.b_r, self.b_u, self.b_c])
        return W, U, b


@dataclass
class ModelParams:
    gru: GruParams
    emb_W: np.ndarray
    emb_b: np.ndarray
    cls_W: np.ndarray
    cls_b: np.ndarray
    dims: ModelDims

    def named(self) -> dict[str, np.ndarray]:
        out = {f.name: getattr(self.gru, f.name) for f in fields(GruParams)}
        out.update(emb_W=self.emb_W, emb_b=self.emb_b, cls_W=self.cls_W, cls_b=self.cls_b)
        return {name: out[name] for name in PARAM_NAMES}

    @classmethod
    def from_named(cls, tensors: dict[str, np.ndarray], dims: ModelDims) -> "ModelParams":
        expected = dims.shapes()
        arrays = {}
        for name in PARAM_NAMES:
            arr = np.array(tensors[name], dtype=np.float64)
            if arr.shape != expected[name]:
                raise DimensionError(f"{name}: expected shape {expected[name]}, got {arr.shape}")
            if not np.isfinite(arr).all():
                raise NumericError(f"{name} contains non-finite entries")
            arrays[name] = arr
        gru = GruParams(**{f.name: arrays[f.name] for f in fields(GruParams)})
        return cls(gru, arrays["emb_W"], arrays["emb_b"], arrays["cls_W"], arrays["cls_b"], dims)

    def copy(self) -> "ModelParams":
        return ModelParams.from_named(self.named(), self.dims)

    def bind(self, tape: dc.Tape) -> dict[str, dc.Node]:
        """Register every parameter as a leaf on ``tape``."""
        return {name: tape.leaf(arr) for name, arr in self.named().items()}


def init_params(dims: ModelDims, seed: int) -> ModelParams:
    """Glorot-uniform weights and zero biases, deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in dims.shapes().items():
        if len(shape) == 1:
            tensors[name] = np.zeros(shape)
        else:
            fan_out, fan_in = shape
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            tensors[name] = rng.uniform(-bound, bound, size=shape)
    return ModelParams.from_named(tensors, dims)


# -- forward pieces ---------------------------------------------------------

def _as_batch(x, dims: ModelDims) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.ndim != 3 or x.shape[1:] != (dims.d_in, dims.t_len):
        raise DimensionError(
            f"input shape {x.shape} does not match D x T = {dims.d_in} x {dims.t_len}")
    return x, single


def _gru_fused(tape: dc.Tape, p: dict[str, dc.Node], X: np.ndarray) -> dc.Node:
    # X is B x D x T; the kernels want T x B x D
    Xt = np.ascontiguousarray(X.transpose(2, 0, 1))
    H = p["U_r"].shape[0]
    W = np.concatenate([p[f"W_{g}"].value for g in GATES])
    U = np.concatenate([p[f"U_{g}"].value for g in GATES])
    b = np.concatenate([p[f"b_{g}"].value for g in GATES])
    Hs, R, Z, C = kernels.gru_forward(Xt, W, U, b)

    def back(g):
        _, dW, dU, db = kernels.gru_backward(g, Xt, W, U, Hs, R, Z, C)
        out = []
        for i in range(3):
            sl = slice(i * H, (i + 1) * H)
            out += [dW[sl], dU[sl], db[sl]]
        return out

    parents = [p[f"{kind}_{g}"] for g in GATES for kind in ("W", "U", "b")]
    return tape.record("gru_sequence", parents, Hs[-1], back)


def _gru_composed(tape: dc.Tape, p: dict[str, dc.Node], X: np.ndarray) -> dc.Node:
    B, _, T = X.shape
    H = p["U_r"].shape[0]
    zero_bias = tape.leaf(np.zeros(H))
    ones = tape.leaf(np.ones((B, H)))
    h = tape.leaf(np.zeros((B, H)))
    for t in range(T):
        x_t = tape.leaf(X[:, :, t])

        def gate(name, state):
            pre_in = dc.affine(tape, x_t, p[f"W_{name}"], p[f"b_{name}"])
            return dc.add(tape, pre_in, dc.affine(tape, state, p[f"U_{name}"], zero_bias))

        r = dc.sigmoid(tape, gate("r", h))
        u = dc.sigmoid(tape, gate("u", h))
        c = dc.tanh_act(tape, gate("c", dc.mul(tape, r, h)))
        h = dc.add(tape, dc.mul(tape, dc.sub(tape, ones, u), h), dc.mul(tape, u, c))
    return h


def gru_forward(tape: dc.Tape, p: dict[str, dc.Node], x, dims: ModelDims,
                fused: bool = True) -> dc.Node:
    """Last GRU hidden state for one ``D x T`` sample or a ``B x D x T`` batch.

    ``fused=False`` builds the recurrence from elementary tape primitives; it is
    slow and exists as an independent check on the fused kernel.
    """
    X, single = _as_batch(x, dims)
    h = _gru_fused(tape, p, X) if fused else _gru_composed(tape, p, X)
    if single:
        return dc.reshape(tape, dc.take_rows(tape, h, [0]), (-1,))
    return h


def embed(tape: dc.Tape, p: dict[str, dc.Node], z: dc.Node) -> dc.Node:
    return dc.leaky_relu(tape, dc.affine(tape, z, p["emb_W"], p["emb_b"]), LEAKY_SLOPE)


def classify(tape: dc.Tape, p: dict[str, dc.Node], w: dc.Node) -> dc.Node:
    return dc.affine(tape, w, p["cls_W"], p["cls_b"])


@dataclass
class BatchForward:
    z_features: dc.Node
    w_features: dc.Node
    logits: dc.Node
    subjects: np.ndarray
    labels: np.ndarray


def forward_batch(tape: dc.Tape, p: dict[str, dc.Node], signals, subjects, labels,
                  dims: ModelDims, fused: bool = True) -> BatchForward:
    """Run ``h(g(f(x)))`` over every row of a batch, preserving row order."""
    X = np.asarray(signals, dtype=np.float64)
    if X.ndim != 3:
        raise DimensionError(f"batch must be B x D x T, got {X.shape}")
    subjects = np.asarray(subjects, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if subjects.shape != (len(X),) or labels.shape != (len(X),):
        raise DimensionError(
            f"{len(X)} rows but {subjects.shape} subject ids and {labels.shape} labels")
    for i, row in enumerate(X):
        if row.shape != (dims.d_in, dims.t_len):
            raise DimensionError(f"row {i}: shape {row.shape} != {(dims.d_in, dims.t_len)}")
        if not np.isfinite(row).all():
            raise NumericError(f"row {i}: non-finite signal values")
    z = gru_forward(tape, p, X, dims, fused=fused)
    w = embed(tape, p, z)
    return BatchForward(z, w, classify(tape, p, w), subjects, labels)


def predict_logits(params: ModelParams, signals, chunk: int = 512) -> np.ndarray:
    """Inference-only logits for a ``B x D x T`` batch (no tape)."""
    X, _ = _as_batch(signals, params.dims)
    W, U, b = params.gru.stacked()
    out = []
    for start in range(0, len(X), chunk):
        Xt = np.ascontiguousarray(X[start: start + chunk].transpose(2, 0, 1))
        z = kernels.gru_forward(Xt, W, U, b)[0][-1]
        a = z @ params.emb_W.T + params.emb_b
        w = np.where(a > 0, a, LEAKY_SLOPE * a)
        out.append(w @ params.cls_W.T + params.cls_b)
    return np.concatenate(out)


# -- checkpoint file ----------------------------------------------------------
#
# "MADP" | u32 version | 5 x u32 dims (d_in, t_len, d_seq, d_emb, n_classes)
# | each tensor of PARAM_NAMES in order, row-major float64, all little-endian.

CKPT_MAGIC = b"MADP"
CKPT_VERSION = 1
_CKPT_HEAD = struct.Struct("<4sI5I")


def save_checkpoint(path, params: ModelParams) -> None:
    with open(path, "wb") as fh:
        fh.write(_CKPT_HEAD.pack(CKPT_MAGIC, CKPT_VERSION, *params.dims.as_tuple()))
        for arr in params.named().values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> ModelParams:
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != CKPT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint (magic {raw[:4]!r})")
    if len(raw) < _CKPT_HEAD.size:
        raise LengthError(f"{path}: truncated header ({len(raw)} bytes)")
    _, version, *dim_vals = _CKPT_HEAD.unpack_from(raw)
    if version != CKPT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    dims = ModelDims(*dim_vals)
    shapes = dims.shapes()
    need = _CKPT_HEAD.size + 8 * sum(int(np.prod(s)) for s in shapes.values())
    if len(raw) < need:
        raise LengthError(f"{path}: expected {need} bytes, found {len(raw)}")
    if len(raw) > need:
        raise FormatError(f"{path}: {len(raw) - need} trailing bytes")
    tensors = {}
    offset = _CKPT_HEAD.size
    for name, shape in shapes.items():
        count = int(np.prod(shape))
        tensors[name] = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(shape)
        offset += 8 * count
    return ModelParams.from_named(tensors, dims)
