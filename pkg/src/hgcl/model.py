"""Parameter initialization and assembly of the full differentiable forward pass."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tape, Tensor
from .encoder import GateParams, GraphOperators, ViewEmbeddings, encode
from .meta import (MetaMLP, PersonalTransforms, apply_transform,
                   extract_meta_knowledge, fuse_final, generate_transforms,
                   materialize_transform)
from .objectives import LossConfig, bpr_loss, infonce_loss, pair_scores, total_loss

PRELU_INIT = 0.25


@dataclass(frozen=True)
class Ablations:
    no_cl: bool = False
    no_meta: bool = False
    no_uu: bool = False
    no_ii: bool = False

    @classmethod
    def from_names(cls, names) -> "Ablations":
        names = set(names or ())
        unknown = names - {"cl", "meta", "uu", "ii"}
        if unknown:
            raise ValueError(f"unknown ablation(s): {sorted(unknown)}")
        return cls(no_cl="cl" in names, no_meta="meta" in names,
                   no_uu="uu" in names, no_ii="ii" in names)

    def names(self) -> list[str]:
        return [n for n, on in (("cl", self.no_cl), ("meta", self.no_meta),
                                ("uu", self.no_uu), ("ii", self.no_ii)) if on]


def _xavier(rng: np.random.Generator, shape: tuple[int, ...], dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def _mlp_keys(prefix: str) -> list[str]:
    return [f"{prefix}_w_in", f"{prefix}_b_in", f"{prefix}_slope",
            f"{prefix}_w_out", f"{prefix}_b_out"]


def param_order(dim: int, rank: int, m: int, n: int) -> list[tuple[str, tuple[int, ...]]]:
    """Declared parameter order and shapes; fixed for checkpoint layout."""
    h = dim  # hidden width of the meta MLPs
    order: list[tuple[str, tuple[int, ...]]] = [
        ("user_emb", (m, dim)), ("item_emb", (n, dim)),
        ("user_gate_w", (dim, dim)), ("user_gate_b", (dim,)),
        ("item_gate_w", (dim, dim)), ("item_gate_b", (dim,)),
    ]
    for side, rows in (("user", dim * rank), ("item", dim * rank)):
        for idx in (1, 2):
            prefix = f"{side}_mlp{idx}"
            order += [(f"{prefix}_w_in", (3 * dim, h)), (f"{prefix}_b_in", (h,)),
                      (f"{prefix}_slope", ()),
                      (f"{prefix}_w_out", (h, rows)), (f"{prefix}_b_out", (rows,))]
    order += [("user_transfer_slope", ()), ("item_transfer_slope", ())]
    return order


def init_params(m: int, n: int, dim: int, rank: int, seed, dtype=np.float64) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    for name, shape in param_order(dim, rank, m, n):
        if name.endswith("slope"):
            params[name] = np.asarray(PRELU_INIT, dtype=dtype)
        elif name.endswith("_b") or "_b_" in name:
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            params[name] = _xavier(rng, shape, dtype)
    return params


def trainable_keys(params: dict[str, np.ndarray], abl: Ablations) -> list[str]:
    dropped: set[str] = set()
    if abl.no_meta or abl.no_uu:
        dropped.update(_mlp_keys("user_mlp1") + _mlp_keys("user_mlp2") + ["user_transfer_slope"])
    if abl.no_meta or abl.no_ii:
        dropped.update(_mlp_keys("item_mlp1") + _mlp_keys("item_mlp2") + ["item_transfer_slope"])
    if abl.no_uu:
        dropped.update(["user_gate_w", "user_gate_b"])
    if abl.no_ii:
        dropped.update(["item_gate_w", "item_gate_b"])
    return [k for k in params if k not in dropped]


def regularized_keys(params: dict[str, np.ndarray], abl: Ablations) -> list[str]:
    """L2-penalized subset: embeddings, gates, and MLP weights; slopes excluded."""
    keep = trainable_keys(params, abl)
    return [k for k in keep if not k.endswith("slope")]


@dataclass
class ForwardCache:
    views: ViewEmbeddings
    transforms_user: PersonalTransforms | None
    transforms_item: PersonalTransforms | None
    e_uu_m: Tensor | None
    e_ii_m: Tensor | None
    e_u_final: Tensor
    e_i_final: Tensor
    bpr: Tensor | None = None
    cl_user: Tensor | None = None
    cl_item: Tensor | None = None
    loss: Tensor | None = None


def _gate(leaves, side: str) -> GateParams:
    return GateParams(weight=leaves[f"{side}_gate_w"], bias=leaves[f"{side}_gate_b"])


def _mlp(leaves, prefix: str) -> MetaMLP:
    return MetaMLP(w_in=leaves[f"{prefix}_w_in"], b_in=leaves[f"{prefix}_b_in"],
                   slope=leaves[f"{prefix}_slope"], w_out=leaves[f"{prefix}_w_out"],
                   b_out=leaves[f"{prefix}_b_out"])


def forward_model(tape: Tape, leaves: dict[str, Tensor], ops: GraphOperators,
                  dim: int, rank: int, n_layers: int, alpha_user: float, alpha_item: float,
                  loss_cfg: LossConfig, abl: Ablations,
                  batch: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None) -> ForwardCache:
    """Encode, transfer, fuse, and (when a batch is given) assemble the loss."""
    views = encode(tape, leaves["user_emb"], leaves["item_emb"],
                   _gate(leaves, "user") if ops.uu is not None else None,
                   _gate(leaves, "item") if ops.ii is not None else None,
                   ops, n_layers)

    tr_u = tr_i = None
    e_uu_m = e_ii_m = None
    if ops.uu is not None and not abl.no_meta:
        m_uu = extract_meta_knowledge(tape, views.e_u, views.e_uu, ops.inc_ui, views.e_i)
        tr_u = generate_transforms(tape, m_uu, _mlp(leaves, "user_mlp1"),
                                   _mlp(leaves, "user_mlp2"), dim, rank)
        e_uu_m = apply_transform(tape, tr_u, views.e_uu, leaves["user_transfer_slope"])
    if ops.ii is not None and not abl.no_meta:
        m_ii = extract_meta_knowledge(tape, views.e_i, views.e_ii, ops.inc_iu, views.e_u)
        tr_i = generate_transforms(tape, m_ii, _mlp(leaves, "item_mlp1"),
                                   _mlp(leaves, "item_mlp2"), dim, rank)
        e_ii_m = apply_transform(tape, tr_i, views.e_ii, leaves["item_transfer_slope"])

    if ops.uu is not None:
        e_u_final = fuse_final(tape, views.e_u, views.e_uu, e_uu_m, alpha_user)
    else:
        e_u_final = views.e_u
    if ops.ii is not None:
        e_i_final = fuse_final(tape, views.e_i, views.e_ii, e_ii_m, alpha_item)
    else:
        e_i_final = views.e_i

    cache = ForwardCache(views=views, transforms_user=tr_u, transforms_item=tr_i,
                         e_uu_m=e_uu_m, e_ii_m=e_ii_m,
                         e_u_final=e_u_final, e_i_final=e_i_final)
    if batch is None:
        return cache

    users, pos, neg = batch
    reg = [leaves[k] for k in regularized_keys(leaves, abl)]
    cache.bpr = bpr_loss(tape,
                         pair_scores(tape, e_u_final, e_i_final, users, pos),
                         pair_scores(tape, e_u_final, e_i_final, users, neg),
                         reg, loss_cfg.l2_weight)

    if not abl.no_cl and loss_cfg.cl_weight > 0:
        if ops.uu is not None:
            anchors = tape.add(e_uu_m, views.e_uu) if e_uu_m is not None else views.e_uu
            cands = None if loss_cfg.use_full_negatives(ops.uu.shape[0]) else np.unique(users)
            cache.cl_user = infonce_loss(tape, anchors, views.e_u, cands, loss_cfg.temperature)
        if ops.ii is not None:
            anchors = tape.add(e_ii_m, views.e_ii) if e_ii_m is not None else views.e_ii
            cands = (None if loss_cfg.use_full_negatives(ops.ii.shape[0])
                     else np.unique(np.concatenate([pos, neg])))
            cache.cl_item = infonce_loss(tape, anchors, views.e_i, cands, loss_cfg.temperature)

    cache.loss = total_loss(tape, cache.bpr, cache.cl_user, cache.cl_item, loss_cfg)
    return cache


def compute_final_embeddings(params: dict[str, np.ndarray], ops: GraphOperators,
                             dim: int, rank: int, n_layers: int,
                             alpha_user: float, alpha_item: float,
                             abl: Ablations) -> tuple[np.ndarray, np.ndarray]:
    """Run the forward pass without a batch and read off the fused embeddings."""
    tape = Tape()
    leaves = {k: tape.leaf(v, name=k) for k, v in params.items()}
    cache = forward_model(tape, leaves, ops, dim, rank, n_layers,
                          alpha_user, alpha_item, LossConfig(), abl)
    tape.finalize()
    return cache.e_u_final.value, cache.e_i_final.value


def transform_matrix_for_node(params: dict[str, np.ndarray], ops: GraphOperators,
                              dim: int, rank: int, n_layers: int,
                              alpha_user: float, alpha_item: float,
                              abl: Ablations, node: int, side: str) -> np.ndarray:
    """Materialized d x d personalized transform of one node."""
    if side not in ("user", "item"):
        raise ValueError("side must be 'user' or 'item'")
    if abl.no_meta:
        raise ValueError("model was trained without the meta network")
    if side == "user" and abl.no_uu:
        raise ValueError("model was trained without the user-user view")
    if side == "item" and abl.no_ii:
        raise ValueError("model was trained without the item-item view")
    count = ops.uu.shape[0] if side == "user" else ops.ii.shape[0]
    if not 0 <= node < count:
        raise ValueError(f"unknown {side} index {node}")
    tape = Tape()
    leaves = {k: tape.leaf(v, name=k) for k, v in params.items()}
    cache = forward_model(tape, leaves, ops, dim, rank, n_layers,
                          alpha_user, alpha_item, LossConfig(), abl)
    tape.finalize()
    tr = cache.transforms_user if side == "user" else cache.transforms_item
    return materialize_transform(tr.w1.value[node], tr.w2.value[node])
