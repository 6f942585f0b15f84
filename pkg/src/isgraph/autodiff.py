"""Reverse-mode differentiation over dense float64 arrays.

A :class:`Tape` records primitive operations as they run.  :func:`backward`
replays the record in reverse and accumulates parameter gradients into a
:class:`ParamStore`.  Backward rules live in the module-level ``BACKWARD``
table, keyed by op name, so individual rules can be swapped out (the
gradient-check tests use that to inject faults).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import sparse

CHECKPOINT_VERSION = 1


class ShapeError(ValueError):
    pass


class TapeError(RuntimeError):
    pass


class Var:
    """A value living on a tape."""

    __slots__ = ("value", "tape", "index", "requires_grad")

    def __init__(self, value: np.ndarray, tape: "Tape", requires_grad: bool):
        self.value = value
        self.tape = tape
        self.requires_grad = requires_grad
        self.index = tape._next_index()

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __repr__(self) -> str:
        return f"Var(shape={self.value.shape}, index={self.index})"


@dataclass
class Record:
    op: str
    inputs: tuple[Var, ...]
    out: Var
    saved: dict = field(default_factory=dict)


class Tape:
    """Operation record.  With ``record=False`` only values are computed (inference)."""

    def __init__(self, record: bool = True) -> None:
        self.record = record
        self.records: list[Record] = []
        self.leaves: dict[str, Var] = {}
        self._count = 0

    def release(self) -> None:
        """Drop the record so its arrays are freed without waiting for the cycle collector."""
        self.records.clear()
        self.leaves.clear()

    def _next_index(self) -> int:
        self._count += 1
        return self._count - 1

    def param(self, store: "ParamStore", name: str) -> Var:
        var = self.leaves.get(name)
        if var is None:
            var = Var(store.params[name], self, True)
            self.leaves[name] = var
        return var

    def const(self, value) -> Var:
        return Var(np.asarray(value, dtype=np.float64), self, False)

    def _emit(self, op: str, inputs: Sequence[Var], value: np.ndarray, **saved) -> Var:
        rg = any(v.requires_grad for v in inputs)
        out = Var(value, self, rg)
        if rg and self.record:
            self.records.append(Record(op, tuple(inputs), out, saved))
        return out


def _tape_of(*xs) -> Tape:
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    raise TapeError("operation needs at least one tape variable")


def _lift(tape: Tape, x) -> Var:
    if isinstance(x, Var):
        if x.tape is not tape:
            raise TapeError("mixing variables from different tapes")
        return x
    return tape.const(x)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------- primitives


def add(a, b) -> Var:
    t = _tape_of(a, b)
    a, b = _lift(t, a), _lift(t, b)
    return t._emit("add", (a, b), a.value + b.value)


def sub(a, b) -> Var:
    t = _tape_of(a, b)
    a, b = _lift(t, a), _lift(t, b)
    return t._emit("sub", (a, b), a.value - b.value)


def mul(a, b) -> Var:
    t = _tape_of(a, b)
    a, b = _lift(t, a), _lift(t, b)
    return t._emit("mul", (a, b), a.value * b.value)


def _mm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # BLAS gemv rounds tail rows differently from the rest; a row-wise
    # reduction keeps every output row independent of where it sits
    if b.shape[1] == 1:
        return (a * b[:, 0]).sum(axis=1, keepdims=True)
    return a @ b


def matmul(a: Var, b) -> Var:
    t = _tape_of(a, b)
    a, b = _lift(t, a), _lift(t, b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes {a.shape} x {b.shape}")
    return t._emit("matmul", (a, b), _mm(a.value, b.value))


def affine(x: Var, weight: Var, bias: Var) -> Var:
    """``x @ weight + bias`` for a row-major batch ``x``."""
    t = _tape_of(x, weight, bias)
    x, weight, bias = _lift(t, x), _lift(t, weight), _lift(t, bias)
    return t._emit("affine", (x, weight, bias), _mm(x.value, weight.value) + bias.value)


def relu(x: Var) -> Var:
    mask = x.value > 0
    return x.tape._emit("relu", (x,), np.where(mask, x.value, 0.0), mask=mask)


def square(x: Var) -> Var:
    return x.tape._emit("square", (x,), x.value * x.value)


def exp(x: Var) -> Var:
    out = np.exp(x.value)
    return x.tape._emit("exp", (x,), out, out=out)


def smooth_l1(x: Var, beta: float = 1.0) -> Var:
    """Elementwise Huber-style loss: ``0.5 x^2 / beta`` below ``beta``, ``|x| - beta/2`` above."""
    a = np.abs(x.value)
    small = a < beta
    out = np.where(small, 0.5 * x.value * x.value / beta, a - 0.5 * beta)
    return x.tape._emit("smooth_l1", (x,), out, small=small, beta=beta)


def abs_(x: Var) -> Var:
    return x.tape._emit("abs", (x,), np.abs(x.value), sign=np.sign(x.value))


def concat(xs: Sequence[Var], axis: int = -1) -> Var:
    t = _tape_of(*xs)
    xs = [_lift(t, x) for x in xs]
    axis = axis % xs[0].value.ndim
    sizes = [x.shape[axis] for x in xs]
    return t._emit("concat", xs, np.concatenate([x.value for x in xs], axis=axis), axis=axis, sizes=sizes)


def gather(x: Var, index: np.ndarray) -> Var:
    """Rows ``x[index]``; ``index`` may have any shape."""
    index = np.asarray(index, dtype=np.int64)
    return x.tape._emit("gather", (x,), x.value[index], index=index)


def slice_rows(x: Var, start: int, stop: int) -> Var:
    """``x[start:stop]`` along axis 0."""
    return x.tape._emit("slice_rows", (x,), x.value[start:stop], start=start, stop=stop)


def reshape(x: Var, shape: tuple[int, ...]) -> Var:
    return x.tape._emit("reshape", (x,), x.value.reshape(shape))


def transpose(x: Var, axes: tuple[int, ...]) -> Var:
    return x.tape._emit("transpose", (x,), np.transpose(x.value, axes), axes=axes)


def sum_(x: Var, axis=None, keepdims: bool = False) -> Var:
    return x.tape._emit("sum", (x,), np.sum(x.value, axis=axis, keepdims=keepdims), axis=axis, keepdims=keepdims)


def mean(x: Var, axis=None) -> Var:
    n = x.value.size if axis is None else x.value.shape[axis]
    return mul(sum_(x, axis=axis), 1.0 / n)


def maxpool_set(x: Var, mask: np.ndarray | None = None) -> tuple[Var, np.ndarray]:
    """Componentwise max over axis -2 (the set axis).

    ``x`` is ``(K, H)`` for a single set or ``(N, K, H)`` for a batch of sets
    with a boolean ``mask`` of shape ``(N, K)``.  Ties go to the lowest row.
    A batch row with no members pools to zeros; a single empty set raises.
    """
    v = x.value
    if v.ndim == 2:
        if v.shape[0] == 0:
            raise ValueError("empty neighbor set")
        arg = np.argmax(v, axis=0)
        out = v[arg, np.arange(v.shape[1])]
        return x.tape._emit("maxpool", (x,), out, arg=arg, empty=None), arg
    if mask is None:
        mask = np.ones(v.shape[:2], dtype=bool)
    filled = np.where(mask[:, :, None], v, -np.inf)
    arg = np.argmax(filled, axis=1)
    empty = ~mask.any(axis=1)
    out = np.take_along_axis(v, arg[:, None, :], axis=1)[:, 0, :]
    out[empty] = 0.0
    arg[empty] = -1
    return x.tape._emit("maxpool", (x,), out, arg=arg, empty=empty), arg


def meanpool_set(x: Var, mask: np.ndarray) -> Var:
    """Masked mean over axis 1 of ``(N, K, H)``; empty rows pool to zeros."""
    w = mask.astype(np.float64)
    cnt = w.sum(axis=1, keepdims=True)
    w = np.divide(w, cnt, out=np.zeros_like(w), where=cnt > 0)
    out = np.einsum("nk,nkh->nh", w, x.value)
    return x.tape._emit("meanpool", (x,), out, w=w)


def softmax(x, axis: int = -1, mask: np.ndarray | None = None):
    """Max-shifted softmax.  Accepts a tape variable or a plain array.

    Entries where ``mask`` is False get probability 0; fully masked rows are
    all zero.
    """
    v = x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)
    if mask is not None:
        v = np.where(mask, v, -np.inf)
    m = np.max(v, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(v - m)
    s = e.sum(axis=axis, keepdims=True)
    out = np.divide(e, s, out=np.zeros_like(e), where=s > 0)
    if not isinstance(x, Var):
        return out
    return x.tape._emit("softmax", (x,), out, out=out, axis=axis)


def log_softmax(x: Var, axis: int = -1) -> Var:
    v = x.value
    m = np.max(v, axis=axis, keepdims=True)
    z = v - m
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    return x.tape._emit("log_softmax", (x,), out, out=out, axis=axis)


def rotate(x: Var, cos: np.ndarray, sin: np.ndarray) -> Var:
    """Rotate the trailing 2-vectors of ``x`` by fixed angles.

    ``cos``/``sin`` broadcast against ``x[..., 0]``.
    """
    cos = np.asarray(cos, dtype=np.float64)
    sin = np.asarray(sin, dtype=np.float64)
    v = x.value
    out = np.stack([cos * v[..., 0] - sin * v[..., 1], sin * v[..., 0] + cos * v[..., 1]], axis=-1)
    return x.tape._emit("rotate", (x,), out, cos=cos, sin=sin)


# ----------------------------------------------------------- backward rules


def _bw_add(g, rec):
    a, b = rec.inputs
    return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


def _bw_sub(g, rec):
    a, b = rec.inputs
    return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)


def _bw_mul(g, rec):
    a, b = rec.inputs
    ga = _unbroadcast(g * b.value, a.shape) if a.requires_grad else None
    gb = _unbroadcast(g * a.value, b.shape) if b.requires_grad else None
    return ga, gb


def _bw_matmul(g, rec):
    a, b = rec.inputs
    ga = g @ b.value.T if a.requires_grad else None
    gb = a.value.T @ g if b.requires_grad else None
    return ga, gb


def _bw_affine(g, rec):
    x, w, b = rec.inputs
    gx = g @ w.value.T if x.requires_grad else None
    gw = x.value.T @ g if w.requires_grad else None
    gb = _unbroadcast(g, b.shape) if b.requires_grad else None
    return gx, gw, gb


def _bw_relu(g, rec):
    return (np.where(rec.saved["mask"], g, 0.0),)


def _bw_square(g, rec):
    return (2.0 * g * rec.inputs[0].value,)


def _bw_exp(g, rec):
    return (g * rec.saved["out"],)


def _bw_smooth_l1(g, rec):
    x = rec.inputs[0].value
    beta = rec.saved["beta"]
    return (g * np.where(rec.saved["small"], x / beta, np.sign(x)),)


def _bw_abs(g, rec):
    return (g * rec.saved["sign"],)


def _bw_concat(g, rec):
    axis = rec.saved["axis"]
    splits = np.cumsum(rec.saved["sizes"])[:-1]
    return tuple(np.split(g, splits, axis=axis))


def _bw_gather(g, rec):
    x = rec.inputs[0]
    idx = rec.saved["index"].reshape(-1)
    rows = g.reshape(idx.size, -1)
    scatter = sparse.csr_matrix((np.ones(idx.size), (idx, np.arange(idx.size))), shape=(x.shape[0], idx.size))
    return (np.asarray(scatter @ rows).reshape(x.shape),)


def _bw_slice_rows(g, rec):
    out = np.zeros_like(rec.inputs[0].value)
    out[rec.saved["start"]:rec.saved["stop"]] = g
    return (out,)


def _bw_reshape(g, rec):
    return (g.reshape(rec.inputs[0].shape),)


def _bw_transpose(g, rec):
    return (np.transpose(g, np.argsort(rec.saved["axes"])),)


def _bw_sum(g, rec):
    x = rec.inputs[0]
    axis, keepdims = rec.saved["axis"], rec.saved["keepdims"]
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, x.shape).copy(),)


def _bw_maxpool(g, rec):
    x = rec.inputs[0]
    arg, empty = rec.saved["arg"], rec.saved["empty"]
    out = np.zeros_like(x.value)
    if x.value.ndim == 2:
        out[arg, np.arange(x.shape[1])] = g
        return (out,)
    n, _, h = x.shape
    rows = np.repeat(np.arange(n), h).reshape(n, h)
    cols = np.tile(np.arange(h), (n, 1))
    keep = ~empty
    out[rows[keep], arg[keep], cols[keep]] = g[keep]
    return (out,)


def _bw_meanpool(g, rec):
    return (rec.saved["w"][:, :, None] * g[:, None, :],)


def _bw_softmax(g, rec):
    y, axis = rec.saved["out"], rec.saved["axis"]
    return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)


def _bw_log_softmax(g, rec):
    y, axis = rec.saved["out"], rec.saved["axis"]
    return (g - np.exp(y) * np.sum(g, axis=axis, keepdims=True),)


def _bw_rotate(g, rec):
    c, s = rec.saved["cos"], rec.saved["sin"]
    return (np.stack([c * g[..., 0] + s * g[..., 1], -s * g[..., 0] + c * g[..., 1]], axis=-1),)


BACKWARD: dict[str, Callable] = {
    "add": _bw_add,
    "sub": _bw_sub,
    "mul": _bw_mul,
    "matmul": _bw_matmul,
    "affine": _bw_affine,
    "relu": _bw_relu,
    "square": _bw_square,
    "exp": _bw_exp,
    "smooth_l1": _bw_smooth_l1,
    "abs": _bw_abs,
    "concat": _bw_concat,
    "gather": _bw_gather,
    "slice_rows": _bw_slice_rows,
    "reshape": _bw_reshape,
    "transpose": _bw_transpose,
    "sum": _bw_sum,
    "maxpool": _bw_maxpool,
    "meanpool": _bw_meanpool,
    "softmax": _bw_softmax,
    "log_softmax": _bw_log_softmax,
    "rotate": _bw_rotate,
}


def backward(tape: Tape, loss: Var, store: "ParamStore") -> None:
    """Accumulate d(loss)/d(param) into ``store.grads`` for every param leaf on ``tape``."""
    if not isinstance(loss, Var) or loss.tape is not tape:
        raise TapeError("loss was not produced on this tape")
    if not tape.record:
        raise TapeError("tape was created with record=False")
    if loss.value.size != 1:
        raise TapeError(f"loss must be scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {loss.index: np.ones_like(loss.value)}
    for rec in reversed(tape.records):
        g = grads.pop(rec.out.index, None)
        if g is None:
            continue
        for var, gi in zip(rec.inputs, BACKWARD[rec.op](g, rec)):
            if gi is None or not var.requires_grad:
                continue
            prev = grads.get(var.index)
            grads[var.index] = gi if prev is None else prev + gi
    for name, leaf in tape.leaves.items():
        g = grads.get(leaf.index)
        if g is not None:
            store.grads[name] += g


# ------------------------------------------------------------ parameters


class ParamStore:
    """Named parameter arrays with gradient and Adam moment buffers."""

    def __init__(self) -> None:
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, value: np.ndarray) -> None:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        value = np.array(value, dtype=np.float64)
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)
        self.m[name] = np.zeros_like(value)
        self.v[name] = np.zeros_like(value)

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def names(self) -> list[str]:
        return sorted(self.params)

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def copy(self) -> "ParamStore":
        other = ParamStore()
        for name in self.params:
            other.add(name, self.params[name])
            other.m[name][...] = self.m[name]
            other.v[name][...] = self.v[name]
        other.step = self.step
        return other

    def num_values(self) -> int:
        return sum(p.size for p in self.params.values())


def adam_step(store: ParamStore, lr: float = 1e-3, betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8) -> None:
    b1, b2 = betas
    store.step += 1
    c1 = 1.0 - b1**store.step
    c2 = 1.0 - b2**store.step
    for name, p in store.params.items():
        g = store.grads[name]
        m, v = store.m[name], store.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def save_checkpoint(store: ParamStore, path: str | Path, meta: dict | None = None, extra: dict[str, np.ndarray] | None = None) -> None:
    arrays = {f"param/{k}": v for k, v in store.params.items()}
    for k, v in (extra or {}).items():
        arrays[f"extra/{k}"] = np.asarray(v)
    header = {"version": CHECKPOINT_VERSION, "meta": meta or {}}
    arrays["header"] = np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)
    path = Path(path)
    try:
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)
    except OSError as exc:
        raise OSError(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path: str | Path) -> tuple[ParamStore, dict, dict[str, np.ndarray]]:
    with np.load(Path(path)) as data:
        header = json.loads(bytes(data["header"]).decode())
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {header.get('version')!r}")
        store = ParamStore()
        extra = {}
        for key in sorted(data.files):
            if key.startswith("param/"):
                store.add(key[len("param/"):], data[key])
            elif key.startswith("extra/"):
                extra[key[len("extra/"):]] = data[key]
    return store, header["meta"], extra


# ------------------------------------------------------------ perceptrons


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths including the input width, e.g. ``(24, 64, 64)``.

    Hidden layers use a rectifier; the output layer is linear.
    """

    widths: tuple[int, ...]

    def __post_init__(self):
        if len(self.widths) < 2:
            raise ValueError("an MLP needs at least one layer")
        if any(int(w) <= 0 for w in self.widths):
            raise ValueError(f"layer widths must be positive: {self.widths}")

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1


def init_mlp(store: ParamStore, prefix: str, spec: MlpSpec, rng: np.random.Generator, out_scale: float = 1.0) -> None:
    for i in range(spec.n_layers):
        fan_in, fan_out = spec.widths[i], spec.widths[i + 1]
        std = np.sqrt(2.0 / fan_in)
        if i == spec.n_layers - 1:
            std = out_scale / np.sqrt(fan_in)
        store.add(f"{prefix}.{i}.weight", rng.normal(0.0, std, size=(fan_in, fan_out)))
        store.add(f"{prefix}.{i}.bias", np.zeros((1, fan_out)))


def mlp_forward(spec: MlpSpec, store: ParamStore, prefix: str, x: Var, tape: Tape, first_layer_input: Var | None = None) -> Var:
    """Run the perceptron ``prefix`` on the rows of ``x``.

    ``first_layer_input`` lets a caller supply an already computed first
    pre-activation (used by message passing, which factors the first
    layer over the concatenated halves).
    """
    h = x
    for i in range(spec.n_layers):
        w = tape.param(store, f"{prefix}.{i}.weight")
        b = tape.param(store, f"{prefix}.{i}.bias")
        if i == 0 and first_layer_input is not None:
            h = first_layer_input
        else:
            if h.shape[-1] != w.shape[0]:
                raise ShapeError(f"{prefix}: layer {i} expects width {w.shape[0]}, got {h.shape[-1]}")
            h = affine(h, w, b)
        if i < spec.n_layers - 1:
            h = relu(h)
    return h


# ------------------------------------------------------------ grad check


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_param: str
    worst_index: tuple
    per_param: dict[str, float]
    n_checked: int
    n_reduced_step: int = 0  # entries where +-h crossed a kink and a smaller step was used

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error < tol


def activation_pattern(tape: Tape) -> str:
    """Digest of every piecewise branch taken on the tape (rectifier masks, pool winners, gathers, signs)."""
    h = hashlib.sha1()
    for rec in tape.records:
        if rec.op == "relu":
            h.update(np.packbits(rec.saved["mask"]).tobytes())
        elif rec.op == "maxpool":
            h.update(np.ascontiguousarray(rec.saved["arg"]).tobytes())
        elif rec.op == "gather":
            h.update(np.ascontiguousarray(rec.saved["index"]).tobytes())
        elif rec.op == "abs":
            h.update(np.ascontiguousarray(rec.saved["sign"]).tobytes())
        elif rec.op == "smooth_l1":
            h.update(np.packbits(rec.saved["small"]).tobytes())
    return h.hexdigest()


def grad_check(
    closure: Callable[[ParamStore], tuple[Tape, Var]],
    store: ParamStore,
    seed: int = 0,
    h: float = 1e-5,
    max_entries: int | None = None,
    names: Iterable[str] | None = None,
) -> GradCheckReport:
    """Compare analytic gradients against central differences.

    Error per entry is ``|a - n| / max(1e-8, |a| + |n|)``.  ``max_entries``
    samples that many entries per parameter (seeded); ``None`` checks all.
    A central difference is only meaningful when both perturbed evaluations
    take the same piecewise branches as the unperturbed one; when ``+-h``
    crosses a kink the step is divided by 10, down to ``h / 100``.
    """
    rng = np.random.default_rng(seed)
    store.zero_grad()
    tape, loss = closure(store)
    base = activation_pattern(tape)
    backward(tape, loss, store)
    analytic = {k: g.copy() for k, g in store.grads.items()}
    store.zero_grad()

    per_param: dict[str, float] = {}
    worst = (-1.0, "", ())
    total = 0
    reduced = 0
    for name in names if names is not None else store.names():
        p = store.params[name]
        flat = p.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        err_max = 0.0
        for j in idx:
            orig = flat[j]
            step = h
            while True:
                flat[j] = orig + step
                tp, lp = closure(store)
                flat[j] = orig - step
                tm, lm = closure(store)
                flat[j] = orig
                if step <= h / 100 or (activation_pattern(tp) == base and activation_pattern(tm) == base):
                    break
                step /= 10
            reduced += step < h
            num = (float(lp.value) - float(lm.value)) / (2.0 * step)
            ana = analytic[name].reshape(-1)[j]
            err = abs(ana - num) / max(1e-8, abs(ana) + abs(num))
            if err > err_max:
                err_max = err
            if err > worst[0]:
                worst = (err, name, np.unravel_index(j, p.shape))
        per_param[name] = err_max
        total += len(idx)
    return GradCheckReport(max(worst[0], 0.0), worst[1], tuple(int(i) for i in worst[2]), per_param, total, int(reduced))
