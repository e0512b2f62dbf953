"""Reverse-mode differentiation over the fixed primitive set the model needs.

A training step's computation graph is static, so a linear tape is enough:
forward calls record nodes in order and ``backward`` walks them in exact
reverse order. Values are plain numpy arrays (float64 in tests, float32 in
production mode); sparse operands are scipy CSR wrapped in ``SparseMatrix``
so the transpose needed by the backward pass is built once.
"""
from __future__ import annotations

import logging

import numpy as np
import scipy.sparse as sp

log = logging.getLogger(__name__)

# Rows with L2 norm below this floor are passed through unchanged by
# row_l2_normalize and treated as similarity 0 by cosine_sim_matrix.
NORM_FLOOR = 1e-12


class DiffError(RuntimeError):
    """Tape misuse or a numerical failure during the backward pass."""


class Tensor:
    """Array tracked on a tape (up to 3 axes; scalars are 0-d arrays)."""

    __slots__ = ("value", "grad", "trainable", "name", "produced")

    def __init__(self, value: np.ndarray, trainable: bool = False, name: str = ""):
        self.value = value
        self.grad: np.ndarray | None = None
        self.trainable = trainable
        self.name = name
        self.produced = False  # True iff created by a primitive

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        tag = self.name or ("node" if self.produced else "leaf")
        return f"Tensor({tag}, shape={self.value.shape})"


class SparseMatrix:
    """Constant CSR operand for spmm; caches its transpose for backward."""

    def __init__(self, mat):
        self.mat = sp.csr_matrix(mat)
        self.mat.sort_indices()
        self.mat_t = self.mat.T.tocsr()
        self.mat_t.sort_indices()

    @property
    def shape(self) -> tuple[int, int]:
        return self.mat.shape

    def astype(self, dtype) -> "SparseMatrix":
        return SparseMatrix(self.mat.astype(dtype, copy=True))


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Tape:
    """Single-owner record of one forward pass.

    Finalize before calling :func:`backward`; recording after finalization is
    an error, as is differentiating an unfinalized tape.
    """

    def __init__(self):
        self._nodes: list[tuple] = []  # (op name, output, inputs, vjp)
        self._tensors: list[Tensor] = []
        self._finalized = False
        # Sign masks of every prelu input, in call order; used by grad_check
        # to detect probes that crossed a kink.
        self.prelu_signs: list[np.ndarray] = []

    @property
    def finalized(self) -> bool:
        return self._finalized

    def finalize(self) -> None:
        self._finalized = True

    def leaf(self, value, trainable: bool = False, name: str = "") -> Tensor:
        t = Tensor(np.asarray(value), trainable=trainable, name=name)
        self._tensors.append(t)
        return t

    def _emit(self, op: str, value: np.ndarray, inputs: tuple[Tensor, ...], vjp) -> Tensor:
        if self._finalized:
            raise DiffError("cannot record a primitive on a finalized tape")
        out = Tensor(value)
        out.produced = True
        self._tensors.append(out)
        self._nodes.append((op, out, inputs, vjp))
        return out

    # -- elementwise / scalar assembly ------------------------------------

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        if a.value.shape != b.value.shape:
            raise ValueError(f"add: shape mismatch {a.shape} vs {b.shape}")
        return self._emit("add", a.value + b.value, (a, b), lambda g: (g, g))

    def sub(self, a: Tensor, b: Tensor) -> Tensor:
        if a.value.shape != b.value.shape:
            raise ValueError(f"sub: shape mismatch {a.shape} vs {b.shape}")
        return self._emit("sub", a.value - b.value, (a, b), lambda g: (g, -g))

    def mul(self, a: Tensor, b: Tensor) -> Tensor:
        if a.value.shape != b.value.shape:
            raise ValueError(f"mul: shape mismatch {a.shape} vs {b.shape}")
        av, bv = a.value, b.value
        return self._emit("mul", av * bv, (a, b), lambda g: (g * bv, g * av))

    def scale(self, a: Tensor, c: float) -> Tensor:
        c = float(c)
        return self._emit("scale", a.value * c, (a,), lambda g: (g * c,))

    def add_bias(self, x: Tensor, b: Tensor) -> Tensor:
        if x.value.ndim != 2 or b.value.ndim != 1 or x.value.shape[1] != b.value.shape[0]:
            raise ValueError(f"add_bias: incompatible shapes {x.shape}, {b.shape}")
        return self._emit("add_bias", x.value + b.value[None, :], (x, b),
                          lambda g: (g, g.sum(axis=0)))

    def sum_all(self, x: Tensor) -> Tensor:
        shape = x.value.shape

        def vjp(g):
            return (np.broadcast_to(g, shape).astype(g.dtype, copy=True),)

        return self._emit("sum_all", np.asarray(x.value.sum()), (x,), vjp)

    def row_sum(self, x: Tensor) -> Tensor:
        if x.value.ndim != 2:
            raise ValueError("row_sum expects a 2-d tensor")
        cols = x.value.shape[1]

        def vjp(g):
            return (np.repeat(g[:, None], cols, axis=1),)

        return self._emit("row_sum", x.value.sum(axis=1), (x,), vjp)

    # -- dense / sparse linear algebra -------------------------------------

    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        if a.value.ndim != 2 or b.value.ndim != 2 or a.value.shape[1] != b.value.shape[0]:
            raise ValueError(f"matmul: incompatible shapes {a.shape} x {b.shape}")
        av, bv = a.value, b.value
        return self._emit("matmul", av @ bv, (a, b),
                          lambda g: (g @ bv.T, av.T @ g))

    def spmm(self, adj: SparseMatrix, x: Tensor) -> Tensor:
        if x.value.ndim != 2 or adj.shape[1] != x.value.shape[0]:
            raise ValueError(f"spmm: incompatible shapes {adj.shape} x {x.shape}")
        return self._emit("spmm", adj.mat @ x.value, (x,),
                          lambda g: (adj.mat_t @ g,))

    def gather_rows(self, x: Tensor, idx: np.ndarray) -> Tensor:
        idx = np.asarray(idx)
        if idx.ndim != 1:
            raise ValueError("gather_rows expects a 1-d index array")
        n = x.value.shape[0]
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            raise ValueError(f"gather_rows: index out of range for {n} rows")
        shape = x.value.shape

        def vjp(g):
            buf = np.zeros(shape, dtype=g.dtype)
            np.add.at(buf, idx, g)
            return (buf,)

        return self._emit("gather_rows", x.value[idx], (x,), vjp)

    def concat_columns(self, *parts: Tensor) -> Tensor:
        if len(parts) < 2:
            raise ValueError("concat_columns needs at least two parts")
        rows = parts[0].value.shape[0]
        for p in parts:
            if p.value.ndim != 2 or p.value.shape[0] != rows:
                raise ValueError("concat_columns: row counts differ")
        widths = [p.value.shape[1] for p in parts]
        splits = np.cumsum(widths)[:-1]

        def vjp(g):
            return tuple(np.hsplit(g, splits))

        return self._emit("concat_columns", np.concatenate([p.value for p in parts], axis=1),
                          tuple(parts), vjp)

    def reshape_rows(self, x: Tensor, inner: tuple[int, int]) -> Tensor:
        if x.value.ndim != 2 or x.value.shape[1] != inner[0] * inner[1]:
            raise ValueError(f"reshape_rows: cannot reshape width {x.shape} to {inner}")
        n = x.value.shape[0]
        flat = x.value.shape

        def vjp(g):
            return (g.reshape(flat),)

        # Row-major reshape; the flattened layout is part of the checkpoint contract.
        return self._emit("reshape_rows", x.value.reshape(n, inner[0], inner[1]), (x,), vjp)

    def lowrank_apply(self, w1: Tensor, w2: Tensor, x: Tensor) -> Tensor:
        if w1.value.ndim != 3 or w2.value.ndim != 3 or x.value.ndim != 2:
            raise ValueError("lowrank_apply expects (N,d,k), (N,k,d), (N,d)")
        n, d, k = w1.value.shape
        if w2.value.shape != (n, k, d) or x.value.shape != (n, d):
            raise ValueError(f"lowrank_apply: incompatible shapes {w1.shape}, {w2.shape}, {x.shape}")
        w1v, w2v, xv = w1.value, w2.value, x.value
        # Two k-wide products per row; the d x d matrix is never materialized.
        t = np.einsum("nkd,nd->nk", w2v, xv)
        y = np.einsum("ndk,nk->nd", w1v, t)

        def vjp(g):
            dw1 = np.einsum("nd,nk->ndk", g, t)
            dt = np.einsum("ndk,nd->nk", w1v, g)
            dw2 = np.einsum("nk,nd->nkd", dt, xv)
            dx = np.einsum("nkd,nk->nd", w2v, dt)
            return (dw1, dw2, dx)

        return self._emit("lowrank_apply", y, (w1, w2, x), vjp)

    # -- nonlinearities -----------------------------------------------------

    def sigmoid(self, x: Tensor) -> Tensor:
        s = _stable_sigmoid(x.value)
        return self._emit("sigmoid", s, (x,), lambda g: (g * s * (1.0 - s),))

    def prelu(self, x: Tensor, slope: Tensor) -> Tensor:
        if slope.value.shape != ():
            raise ValueError("prelu slope must be a scalar tensor")
        a = float(slope.value)
        xv = x.value
        self.prelu_signs.append(xv > 0)
        out = np.where(xv >= 0, xv, a * xv)

        def vjp(g):
            dx = g * np.where(xv >= 0, 1.0, a)
            da = np.asarray((g * np.where(xv < 0, xv, 0.0)).sum(), dtype=g.dtype)
            return (dx, da)

        return self._emit("prelu", out, (x, slope), vjp)

    def softplus(self, x: Tensor) -> Tensor:
        xv = x.value
        out = np.log1p(np.exp(-np.abs(xv))) + np.maximum(xv, 0.0)
        return self._emit("softplus", out, (x,),
                          lambda g: (g * _stable_sigmoid(xv),))

    def row_l2_normalize(self, x: Tensor) -> Tensor:
        if x.value.ndim != 2:
            raise ValueError("row_l2_normalize expects a 2-d tensor")
        xv = x.value
        norms = np.sqrt((xv * xv).sum(axis=1))
        passthrough = norms < NORM_FLOOR
        inv = np.where(passthrough, 1.0, 1.0 / np.where(passthrough, 1.0, norms))
        y = xv * inv[:, None]

        def vjp(g):
            dot = (g * y).sum(axis=1)
            dx = (g - y * dot[:, None]) * inv[:, None]
            if passthrough.any():
                dx[passthrough] = g[passthrough]
            return (dx,)

        return self._emit("row_l2_normalize", y, (x,), vjp)

    def logsumexp_rows(self, x: Tensor) -> Tensor:
        if x.value.ndim != 2:
            raise ValueError("logsumexp_rows expects a 2-d tensor")
        xv = x.value
        mx = xv.max(axis=1)
        z = np.exp(xv - mx[:, None])
        s = z.sum(axis=1)
        softmax = z / s[:, None]

        def vjp(g):
            return (softmax * g[:, None],)

        return self._emit("logsumexp_rows", mx + np.log(s), (x,), vjp)

    def take_diag(self, x: Tensor) -> Tensor:
        if x.value.ndim != 2 or x.value.shape[0] != x.value.shape[1]:
            raise ValueError("take_diag expects a square 2-d tensor")
        n = x.value.shape[0]
        rng = np.arange(n)

        def vjp(g):
            buf = np.zeros((n, n), dtype=g.dtype)
            buf[rng, rng] = g
            return (buf,)

        return self._emit("take_diag", x.value[rng, rng].copy(), (x,), vjp)

    def cosine_sim_matrix(self, a: Tensor, b: Tensor) -> Tensor:
        if a.value.ndim != 2 or b.value.ndim != 2 or a.value.shape[1] != b.value.shape[1]:
            raise ValueError(f"cosine_sim_matrix: incompatible shapes {a.shape}, {b.shape}")
        av, bv = a.value, b.value
        na = np.sqrt((av * av).sum(axis=1))
        nb = np.sqrt((bv * bv).sum(axis=1))
        za, zb = na < NORM_FLOOR, nb < NORM_FLOOR
        if za.any() or zb.any():
            log.warning("cosine_sim_matrix: %d/%d near-zero rows treated as similarity 0",
                        int(za.sum()), int(zb.sum()))
        inv_a = np.where(za, 0.0, 1.0 / np.where(za, 1.0, na))
        inv_b = np.where(zb, 0.0, 1.0 / np.where(zb, 1.0, nb))
        ah = av * inv_a[:, None]
        bh = bv * inv_b[:, None]
        c = ah @ bh.T

        def vjp(g):
            gc_row = (g * c).sum(axis=1)
            gc_col = (g * c).sum(axis=0)
            da = (g @ bh - ah * gc_row[:, None]) * inv_a[:, None]
            db = (g.T @ ah - bh * gc_col[:, None]) * inv_b[:, None]
            return (da, db)

        return self._emit("cosine_sim_matrix", c, (a, b), vjp)


def backward(tape: Tape, loss: Tensor) -> None:
    """Fill ``grad`` on every trainable leaf reachable from ``loss``.

    Gradients accumulate additively when a tensor feeds multiple nodes;
    non-trainable leaves are left untouched.
    """
    if not tape.finalized:
        raise DiffError("backward called before the forward pass was finalized")
    if loss.value.shape != ():
        raise DiffError(f"loss must be scalar, got shape {loss.value.shape}")
    for t in tape._tensors:
        t.grad = None
    loss.grad = np.asarray(1.0, dtype=loss.value.dtype)
    for op, out, inputs, vjp in reversed(tape._nodes):
        og = out.grad
        if og is None:
            continue
        grads = vjp(og)
        for t, g in zip(inputs, grads):
            if not t.produced and not t.trainable:
                continue
            if np.isnan(g).any():
                raise DiffError(f"NaN gradient produced by primitive '{op}'")
            if t.grad is None:
                t.grad = np.array(g, dtype=g.dtype)
            else:
                t.grad += g


def grad_check(builder, inputs: dict[str, np.ndarray], eps: float = 1e-5,
               max_coords: int | None = 200, seed: int = 0) -> float:
    """Compare analytic gradients of ``builder`` against central differences.

    ``builder(tape, tensors)`` must deterministically build a scalar loss from
    the leaf tensors created for ``inputs``. When the total coordinate count
    exceeds ``max_coords`` a seeded random subset of that size is probed
    (``None`` probes everything). Probes whose two evaluations disagree on any
    prelu input sign are skipped (the perturbation crossed a kink). Returns
    the max relative error ``|a - fd| / (|a| + |fd| + 1e-12)`` over all probed
    coordinates.
    """
    arrays = {k: np.asarray(v, dtype=np.float64) for k, v in inputs.items()}

    def run(value_map, with_grads):
        tape = Tape()
        tensors = {k: tape.leaf(v, trainable=with_grads, name=k) for k, v in value_map.items()}
        loss = builder(tape, tensors)
        if loss.value.shape != ():
            raise DiffError("grad_check requires a scalar loss")
        tape.finalize()
        signs = tuple(s.tobytes() for s in tape.prelu_signs)
        if with_grads:
            backward(tape, loss)
            return tensors, signs
        return float(loss.value), signs

    tensors, _ = run(arrays, True)
    keys = sorted(arrays)
    sizes = np.array([arrays[k].size for k in keys])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    total = int(offsets[-1])
    rng = np.random.default_rng(seed)
    if max_coords is not None and total > max_coords:
        coords = np.sort(rng.choice(total, size=max_coords, replace=False))
    else:
        coords = np.arange(total)

    analytic = {}
    for k in keys:
        grad = tensors[k].grad
        analytic[k] = np.zeros(arrays[k].size) if grad is None else grad.ravel()

    max_rel = 0.0
    for gc in coords:
        which = int(np.searchsorted(offsets, gc, side="right") - 1)
        key = keys[which]
        local = int(gc - offsets[which])
        probes = []
        sigs = []
        for delta in (eps, -eps):
            work = {k: v for k, v in arrays.items()}
            pert = arrays[key].copy()
            pert.flat[local] += delta
            work[key] = pert
            val, sg = run(work, False)
            probes.append(val)
            sigs.append(sg)
        if sigs[0] != sigs[1]:
            continue  # kink coordinate
        fd = (probes[0] - probes[1]) / (2.0 * eps)
        a = float(analytic[key][local])
        rel = abs(a - fd) / (abs(a) + abs(fd) + 1e-12)
        max_rel = max(max_rel, rel)
    return max_rel
