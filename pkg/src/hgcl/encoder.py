"""Heterogeneous graph encoding: relation-aware gating, per-view message
propagation, per-layer fusion of the auxiliary streams into the interaction
stream, and normalized layer aggregation."""
from __future__ import annotations

from dataclasses import dataclass, field

from .autodiff import SparseMatrix, Tape, Tensor


@dataclass
class GateParams:
    """Self-gating transform (d x d weight, d bias) for one node side."""

    weight: Tensor
    bias: Tensor


@dataclass
class ViewEmbeddings:
    """Initial, per-layer, and aggregated embeddings of all four streams.

    Auxiliary entries are None when the corresponding graph is ablated away.
    """

    e_u0: Tensor
    e_i0: Tensor
    e_uu0: Tensor | None
    e_ii0: Tensor | None
    layers_u: list[Tensor] = field(default_factory=list)
    layers_i: list[Tensor] = field(default_factory=list)
    layers_uu: list[Tensor] = field(default_factory=list)
    layers_ii: list[Tensor] = field(default_factory=list)
    e_u: Tensor | None = None
    e_i: Tensor | None = None
    e_uu: Tensor | None = None
    e_ii: Tensor | None = None


def self_gate(tape: Tape, e0: Tensor, gate: GateParams) -> Tensor:
    """Elementwise sigmoid gate computed from the embedding itself."""
    z = tape.add_bias(tape.matmul(e0, gate.weight), gate.bias)
    return tape.mul(e0, tape.sigmoid(z))


def propagate_layer(tape: Tape, adj: SparseMatrix, e_src: Tensor) -> Tensor:
    """One hop of degree-normalized neighbor aggregation (weights are baked
    into the adjacency at build time; zero-degree rows come out zero)."""
    return tape.spmm(adj, e_src)


def fuse_views(tape: Tape, e_main: Tensor, e_aux: Tensor) -> Tensor:
    """Elementwise mean pooling of the interaction and auxiliary streams."""
    return tape.scale(tape.add(e_main, e_aux), 0.5)


def aggregate_layers(tape: Tape, e0: Tensor, layers: list[Tensor]) -> Tensor:
    """Initial embedding plus the row-normalized output of every layer."""
    if not layers:
        raise ValueError("aggregate_layers needs at least one layer")
    out = e0
    for layer in layers:
        out = tape.add(out, tape.row_l2_normalize(layer))
    return out


@dataclass(frozen=True)
class GraphOperators:
    """Sparse operators derived from a HeteroGraph in the active dtype."""

    ui: SparseMatrix        # m x n, normalized
    iu: SparseMatrix        # n x m, normalized
    uu: SparseMatrix | None
    ii: SparseMatrix | None
    inc_ui: SparseMatrix    # m x n, binary incidence
    inc_iu: SparseMatrix


def build_graph_operators(graph, dtype, *, no_uu: bool = False, no_ii: bool = False) -> GraphOperators:
    inc = graph.binary_ui()
    return GraphOperators(
        ui=SparseMatrix(graph.a_ui.astype(dtype)),
        iu=SparseMatrix(graph.a_ui.T.astype(dtype)),
        uu=None if no_uu else SparseMatrix(graph.a_uu.astype(dtype)),
        ii=None if no_ii else SparseMatrix(graph.a_ii.astype(dtype)),
        inc_ui=SparseMatrix(inc.astype(dtype)),
        inc_iu=SparseMatrix(inc.T.astype(dtype)),
    )


def encode(tape: Tape, e_u0: Tensor, e_i0: Tensor, user_gate: GateParams | None,
           item_gate: GateParams | None, ops: GraphOperators, n_layers: int) -> ViewEmbeddings:
    """Run the full multi-layer encoding of all active streams.

    Per layer: the interaction view propagates users from items and items from
    users; each auxiliary view propagates within its own graph; mean-pooling
    fusion of the auxiliary output then forms the interaction-view input of
    the next layer (the auxiliary streams stay untouched by fusion). Ablated
    sides skip both the auxiliary stream and the fusion step.
    """
    if n_layers < 1:
        raise ValueError("need at least one propagation layer")
    views = ViewEmbeddings(
        e_u0=e_u0,
        e_i0=e_i0,
        e_uu0=self_gate(tape, e_u0, user_gate) if ops.uu is not None else None,
        e_ii0=self_gate(tape, e_i0, item_gate) if ops.ii is not None else None,
    )
    x_u, x_i = e_u0, e_i0
    x_uu, x_ii = views.e_uu0, views.e_ii0
    for _ in range(n_layers):
        p_u = propagate_layer(tape, ops.ui, x_i)
        p_i = propagate_layer(tape, ops.iu, x_u)
        views.layers_u.append(p_u)
        views.layers_i.append(p_i)
        # Fusion only feeds the next layer's interaction-view input; the
        # aggregation below consumes the raw per-view propagation outputs.
        if ops.uu is not None:
            x_uu = propagate_layer(tape, ops.uu, x_uu)
            views.layers_uu.append(x_uu)
            x_u = fuse_views(tape, p_u, x_uu)
        else:
            x_u = p_u
        if ops.ii is not None:
            x_ii = propagate_layer(tape, ops.ii, x_ii)
            views.layers_ii.append(x_ii)
            x_i = fuse_views(tape, p_i, x_ii)
        else:
            x_i = p_i
    views.e_u = aggregate_layers(tape, e_u0, views.layers_u)
    views.e_i = aggregate_layers(tape, e_i0, views.layers_i)
    if ops.uu is not None:
        views.e_uu = aggregate_layers(tape, views.e_uu0, views.layers_uu)
    if ops.ii is not None:
        views.e_ii = aggregate_layers(tape, views.e_ii0, views.layers_ii)
    return views
