"""Per-frame spatial interaction: radius graph and multi-head graph attention.

Attention scores are evaluated per directed edge only (never all pairs), so
the work per frame is proportional to the edge count; ``WorkCounter`` makes
that measurable.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

# Feature layout per vehicle row: x, y, vx, vy, ax, ay, length, width
FEATURE_DIM = 8


@dataclass
class SceneFrame:
    """One time slice of the scene: N vehicles, 8 features each."""

    timestamp: float
    vehicles: np.ndarray  # (N, 8)

    def __post_init__(self):
        self.vehicles = np.asarray(self.vehicles, dtype=np.float64)
        if self.vehicles.ndim != 2 or self.vehicles.shape[1] != FEATURE_DIM:
            raise ValueError(f"SceneFrame expects (N, {FEATURE_DIM}) features, got {self.vehicles.shape}")
        if self.vehicles.shape[0] < 1:
            raise ValueError("SceneFrame needs at least one vehicle")
        if not np.isfinite(self.vehicles).all():
            raise ValueError("non-finite vehicle features")
        if (self.vehicles[:, 6:8] <= 0).any():
            raise ValueError("vehicle length/width must be positive")

    @property
    def n(self) -> int:
        return self.vehicles.shape[0]

    @property
    def positions(self) -> np.ndarray:
        return self.vehicles[:, 0:2]


@dataclass
class AdjacencyMatrix:
    n: int
    entries: np.ndarray  # (N, N) binary, symmetric, unit diagonal


@dataclass
class WorkCounter:
    """Counts attention-score evaluations; one per directed edge per head."""

    score_evals: int = 0
    all_pairs_equivalent: int = 0


def build_adjacency(frame: SceneFrame, radius: float) -> AdjacencyMatrix:
    """Edges where center distance is strictly below ``radius``; self-loops always."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    pos = frame.positions
    diff = pos[:, None, :] - pos[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=2))
    entries = (dist < radius).astype(np.int64)
    np.fill_diagonal(entries, 1)
    return AdjacencyMatrix(n=frame.n, entries=entries)


def adjacency_edges(adj: AdjacencyMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Directed edge list (src, dst); message flows src -> dst."""
    dst, src = np.nonzero(adj.entries)  # entry (i, j) == 1 means j in N_i
    return src, dst


def edges_from_positions(positions: np.ndarray, radius: float) -> tuple[np.ndarray, np.ndarray]:
    """Edge list straight from positions, for precomputed window batches."""
    diff = positions[:, None, :] - positions[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=2))
    within = dist < radius
    np.fill_diagonal(within, True)
    dst, src = np.nonzero(within)
    return src, dst


def embed_features(x: Tensor, w_e: Tensor, b_e: Tensor) -> Tensor:
    """ELU(x @ W_e + b_e): lift raw vehicle features to the hidden width."""
    return ad.elu(ad.linear(x, w_e, b_e))


def embed_frame(frame: SceneFrame, w_e: Tensor, b_e: Tensor) -> Tensor:
    return embed_features(ad.constant(frame.vehicles), w_e, b_e)


@dataclass
class GatHeadParams:
    w_s: Tensor  # (D_in, D_out) shared transform
    a: Tensor  # (2*D_out, 1) attention vector


@dataclass
class GatLayerParams:
    heads: list[GatHeadParams] = field(default_factory=list)
    combine: str = "concat"  # hidden layers concat, final layer averages
    leaky_slope: float = 0.2


def _head_attention(
    h: Tensor,
    src: np.ndarray,
    dst: np.ndarray,
    head: GatHeadParams,
    slope: float,
    counter: WorkCounter | None,
) -> tuple[Tensor, Tensor]:
    """Per-edge attention weights and transformed features for one head."""
    d_out = head.w_s.shape[1]
    wh = ad.matmul(h, head.w_s)
    # first half of the attention vector pairs with the destination node
    a_dst = ad.rows(head.a, 0, d_out)
    a_src = ad.rows(head.a, d_out, 2 * d_out)
    s_src = ad.matmul(wh, a_src)
    s_dst = ad.matmul(wh, a_dst)
    e = ad.leaky_relu(ad.add(ad.gather_rows(s_src, src), ad.gather_rows(s_dst, dst)), slope)
    if counter is not None:
        counter.score_evals += len(src)
        counter.all_pairs_equivalent += h.shape[0] * h.shape[0]
    alpha = ad.edge_softmax(e, dst, h.shape[0])
    return alpha, wh


def gat_attention(h: Tensor, adj: AdjacencyMatrix, head: GatHeadParams, slope: float = 0.2) -> np.ndarray:
    """Dense (N, N) attention weights for one head; zeros off-neighborhood."""
    if adj.n != h.shape[0]:
        raise ad.ShapeMismatchError(f"adjacency n={adj.n} vs features {h.shape}")
    src, dst = adjacency_edges(adj)
    alpha, _ = _head_attention(h, src, dst, head, slope, None)
    dense = np.zeros((adj.n, adj.n))
    dense[dst, src] = alpha.data[:, 0]
    return dense


def gat_layer_edges(
    h: Tensor,
    src: np.ndarray,
    dst: np.ndarray,
    layer: GatLayerParams,
    counter: WorkCounter | None = None,
) -> Tensor:
    """One GAT layer over an explicit edge list."""
    n = h.shape[0]
    outs = []
    for head in layer.heads:
        alpha, wh = _head_attention(h, src, dst, head, layer.leaky_slope, counter)
        msgs = ad.gather_rows(wh, src)
        agg = ad.edge_aggregate(alpha, msgs, dst, n)
        outs.append(agg)
    if layer.combine == "concat":
        return ad.concat_cols([ad.elu(o) for o in outs])
    if layer.combine == "average":
        acc = outs[0]
        for o in outs[1:]:
            acc = ad.add(acc, o)
        return ad.elu(ad.scale(acc, 1.0 / len(outs)))
    raise ValueError(f"unknown combine mode: {layer.combine}")


def gat_layer_forward(
    h: Tensor,
    adj: AdjacencyMatrix,
    layer: GatLayerParams,
    counter: WorkCounter | None = None,
) -> Tensor:
    if adj.n != h.shape[0]:
        raise ad.ShapeMismatchError(f"adjacency n={adj.n} vs features {h.shape}")
    src, dst = adjacency_edges(adj)
    return gat_layer_edges(h, src, dst, layer, counter)
