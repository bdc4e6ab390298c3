"""Time-segmented voxel graph list.

The (n*T, H, W) event volume is cut into (1, h, w) voxels.  For each of the
T frames the k most populated voxels among its n time slices become graph
nodes carrying the polarities of their earliest K events; nodes closer than
R (in voxel-index units) are joined by edges weighted with that distance.
"""
from __future__ import annotations

import json
from collections.abc import Mapping
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .events import EventStream, SensorGeometry


class GraphFormatError(ValueError):
    pass


@dataclass(frozen=True)
class GraphConfig:
    bins: int = 60
    slices_per_bin: int = 3
    voxel_h: int = 4
    voxel_w: int = 4
    top_k: int = 32
    points: int = 16
    radius: float = 2.0
    # per-axis scale applied to (t_slice, x_vox, y_vox) before measuring distance
    scale: tuple = (1.0, 1.0, 1.0)
    sampling: str = "earliest"  # or "random"
    sample_seed: int = 0

    def __post_init__(self):
        for name in ("bins", "slices_per_bin", "voxel_h", "voxel_w", "top_k", "points"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        if self.sampling not in ("earliest", "random"):
            raise ValueError(f"unknown sampling mode {self.sampling!r}")
        object.__setattr__(self, "scale", tuple(float(v) for v in self.scale))

    @property
    def slices(self) -> int:
        return self.bins * self.slices_per_bin

    def grid(self, geometry: SensorGeometry) -> tuple[int, int, int]:
        """(slices, voxel rows, voxel columns); boundary voxels may be partial."""
        return (
            self.slices,
            -(-geometry.height // self.voxel_h),
            -(-geometry.width // self.voxel_w),
        )


class GraphNode(NamedTuple):
    coord: tuple  # (t_slice, x_vox, y_vox)
    feat: tuple


@dataclass(frozen=True, eq=False)
class VoxelGraph:
    """One frame's graph, stored as arrays.

    ``coords`` is (m, 3) int64 ordered (t_slice, x_vox, y_vox), ``feats`` is
    (m, K) int8, ``edges`` is (E, 2) int64 with both directions present and
    ``weights`` the matching Euclidean distances.
    """

    coords: np.ndarray
    feats: np.ndarray
    edges: np.ndarray
    weights: np.ndarray
    counts: np.ndarray = field(default=None, repr=False)

    @classmethod
    def empty(cls, points: int) -> "VoxelGraph":
        return cls(
            np.zeros((0, 3), np.int64),
            np.zeros((0, points), np.int8),
            np.zeros((0, 2), np.int64),
            np.zeros(0, np.float64),
            np.zeros(0, np.int64),
        )

    @property
    def num_nodes(self) -> int:
        return len(self.coords)

    @property
    def nodes(self) -> list[GraphNode]:
        return [GraphNode(tuple(c), tuple(f)) for c, f in zip(self.coords.tolist(), self.feats.tolist())]

    def edge_dict(self) -> dict:
        return {(int(i), int(j)): float(w) for (i, j), w in zip(self.edges, self.weights)}


@dataclass(frozen=True, eq=False)
class VoxelGraphList:
    cfg: GraphConfig
    geometry: SensorGeometry
    graphs: tuple

    def __len__(self) -> int:
        return len(self.graphs)

    def __getitem__(self, i) -> VoxelGraph:
        return self.graphs[i]

    def __iter__(self):
        return iter(self.graphs)


# --------------------------------------------------------------------------
# voxelization

def time_slices(t: np.ndarray, slices: int) -> np.ndarray:
    """floor(slices * (t - t_first) / span), clamped to the last slice.

    Integer arithmetic keeps slice boundaries exact.
    """
    if len(t) == 0:
        return np.zeros(0, np.int64)
    t0, span = int(t[0]), int(t[-1]) - int(t[0])
    if span == 0:
        return np.zeros(len(t), np.int64)
    rel = t - t0
    if span < (1 << 62) // slices:
        s = rel * slices // span
    else:
        s = np.array([r * slices // span for r in rel.tolist()], dtype=np.int64)
    return np.minimum(s, slices - 1)


def _stable_order(major: np.ndarray, minor: np.ndarray, n_major: int, n_minor: int) -> np.ndarray:
    """Stable argsort by (major, minor); two 16-bit radix passes when the keys fit."""
    if n_major <= 0xFFFF and n_minor <= 0xFFFF:
        first = np.argsort(minor.astype(np.uint16), kind="stable")
        second = np.argsort(major[first].astype(np.uint16), kind="stable")
        return first[second]
    return np.lexsort((minor, major))


class VoxelOccupancy(Mapping):
    """Mapping (t_slice, x_vox, y_vox) -> indices of the events in that voxel.

    Event indices within a voxel are in stream (time) order.  The linear
    voxel id orders voxels by (t_slice, y_vox, x_vox), which is also the
    tie-break order for top-k selection.
    """

    def __init__(self, stream: EventStream, cfg: GraphConfig):
        self.cfg = cfg
        self.geometry = stream.geometry
        S, GY, GX = cfg.grid(stream.geometry)
        self.grid = (S, GY, GX)
        ts = time_slices(stream.t, S)
        spatial = (stream.y // cfg.voxel_h) * GX + stream.x // cfg.voxel_w
        self.order = _stable_order(ts, spatial, S, GY * GX)
        sorted_vid = (ts * (GY * GX) + spatial)[self.order]
        n = len(sorted_vid)
        self.starts = np.flatnonzero(np.r_[True, sorted_vid[1:] != sorted_vid[:-1]]) if n else \
            np.zeros(0, np.int64)
        self.counts = np.diff(np.r_[self.starts, n]).astype(np.int64)
        self.vids = sorted_vid[self.starts]
        self.polarity = stream.p

    def key(self, vid: int) -> tuple:
        S, GY, GX = self.grid
        t, rem = divmod(int(vid), GY * GX)
        y, x = divmod(rem, GX)
        return (t, x, y)

    def _vid(self, key) -> int:
        t, x, y = key
        _, GY, GX = self.grid
        return (t * GY + y) * GX + x

    def __getitem__(self, key) -> np.ndarray:
        i = np.searchsorted(self.vids, self._vid(key))
        if i == len(self.vids) or self.vids[i] != self._vid(key):
            raise KeyError(key)
        return self.order[self.starts[i]:self.starts[i] + self.counts[i]]

    def __iter__(self):
        return (self.key(v) for v in self.vids)

    def __len__(self) -> int:
        return len(self.vids)

    def count(self, key) -> int:
        try:
            return len(self[key])
        except KeyError:
            return 0


def voxelize(stream: EventStream, cfg: GraphConfig) -> VoxelOccupancy:
    return VoxelOccupancy(stream, cfg)


def select_top_k(occupancy: VoxelOccupancy, frame_index: int, cfg: GraphConfig):
    """Return (coords, feats, counts) of the selected voxels, in rank order."""
    n = cfg.slices_per_bin
    if not 0 <= frame_index < cfg.bins:
        raise IndexError(f"frame {frame_index} out of range for {cfg.bins} bins")
    _, GY, GX = occupancy.grid
    lo = np.searchsorted(occupancy.vids, frame_index * n * GY * GX)
    hi = np.searchsorted(occupancy.vids, (frame_index + 1) * n * GY * GX)
    vids = occupancy.vids[lo:hi]
    counts = occupancy.counts[lo:hi]
    starts = occupancy.starts[lo:hi]
    rank = np.lexsort((vids, -counts))[: cfg.top_k]
    vids, counts, starts = vids[rank], counts[rank], starts[rank]

    t, rem = np.divmod(vids, GY * GX)
    y, x = np.divmod(rem, GX)
    coords = np.stack([t, x, y], axis=1).astype(np.int64)

    K = cfg.points
    feats = np.zeros((len(vids), K), np.int8)
    if cfg.sampling == "earliest":
        j = np.arange(K)
        valid = j[None, :] < counts[:, None]
        pos = (starts[:, None] + j[None, :])[valid]
        feats[valid] = occupancy.polarity[occupancy.order[pos]]
    else:
        rng = np.random.default_rng((cfg.sample_seed, frame_index))
        for r in range(len(vids)):
            members = occupancy.order[starts[r]:starts[r] + counts[r]]
            if counts[r] > K:
                members = np.sort(rng.choice(members, K, replace=False))
            feats[r, : len(members)] = occupancy.polarity[members]
    return coords, feats, counts.astype(np.int64)


def build_edges(coords: np.ndarray, cfg: GraphConfig) -> tuple[np.ndarray, np.ndarray]:
    """All directed pairs with 0 < distance < R, in (i, j) row-major order."""
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 3)
    if len(coords) < 2:
        return np.zeros((0, 2), np.int64), np.zeros(0, np.float64)
    scaled = coords * np.asarray(cfg.scale)
    diff = scaled[:, None, :] - scaled[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    mask = (dist > 0) & (dist < cfg.radius)
    edges = np.argwhere(mask).astype(np.int64)
    return edges, dist[mask]


def _frame_graph(occupancy: VoxelOccupancy, i: int, cfg: GraphConfig) -> VoxelGraph:
    coords, feats, counts = select_top_k(occupancy, i, cfg)
    if len(coords) == 0:
        return VoxelGraph.empty(cfg.points)
    edges, weights = build_edges(coords, cfg)
    return VoxelGraph(coords, feats, edges, weights, counts)


# padded (T, k, k) distance tensors above this many entries fall back to the per-frame path
_BATCH_LIMIT = 1 << 22


def _batched_graphs(occupancy: VoxelOccupancy, cfg: GraphConfig) -> list[VoxelGraph]:
    """Every frame at once: one ranking sort and one padded distance tensor.

    Same result as calling select_top_k / build_edges frame by frame, but
    without a Python loop over frames.  Earliest-event sampling only.
    """
    T, n, k, K = cfg.bins, cfg.slices_per_bin, cfg.top_k, cfg.points
    _, GY, GX = occupancy.grid
    vids, counts, starts = occupancy.vids, occupancy.counts, occupancy.starts
    frame = vids // (n * GY * GX)
    ranked = np.lexsort((vids, -counts, frame))
    frame_ranked = frame[ranked]
    first = np.searchsorted(frame_ranked, np.arange(T))
    rank = np.arange(len(ranked)) - first[frame_ranked]
    keep = rank < k
    sel, fr, rk = ranked[keep], frame_ranked[keep], rank[keep]

    t, rem = np.divmod(vids[sel], GY * GX)
    y, x = np.divmod(rem, GX)
    coords = np.stack([t, x, y], axis=1).astype(np.int64)
    sel_counts, sel_starts = counts[sel].astype(np.int64), starts[sel]
    feats = np.zeros((len(sel), K), np.int8)
    j = np.arange(K)
    valid = j[None, :] < sel_counts[:, None]
    feats[valid] = occupancy.polarity[occupancy.order[(sel_starts[:, None] + j[None, :])[valid]]]

    padded = np.zeros((T, k, 3))
    padded[fr, rk] = coords * np.asarray(cfg.scale)
    present = np.zeros((T, k), bool)
    present[fr, rk] = True
    diff = padded[:, :, None, :] - padded[:, None, :, :]
    dist = np.sqrt(np.einsum("tijc,tijc->tij", diff, diff))
    mask = present[:, :, None] & present[:, None, :] & (dist > 0) & (dist < cfg.radius)
    te, ie, je = np.nonzero(mask)
    weights = dist[te, ie, je]
    edges = np.stack([ie, je], axis=1).astype(np.int64)

    node_bounds = np.r_[0, np.cumsum(np.bincount(fr, minlength=T))]
    edge_bounds = np.r_[0, np.cumsum(np.bincount(te, minlength=T))]
    graphs = []
    for i in range(T):
        a, b = node_bounds[i], node_bounds[i + 1]
        if a == b:
            graphs.append(VoxelGraph.empty(K))
            continue
        c, d = edge_bounds[i], edge_bounds[i + 1]
        graphs.append(VoxelGraph(coords[a:b], feats[a:b], edges[c:d], weights[c:d], sel_counts[a:b]))
    return graphs


def build_graph_list(stream: EventStream, cfg: GraphConfig, threads: int = 1) -> VoxelGraphList:
    occupancy = voxelize(stream, cfg)
    if cfg.sampling == "earliest" and cfg.bins * cfg.top_k * cfg.top_k <= _BATCH_LIMIT:
        graphs = _batched_graphs(occupancy, cfg)
    elif threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            graphs = list(pool.map(lambda i: _frame_graph(occupancy, i, cfg), range(cfg.bins)))
    else:
        graphs = [_frame_graph(occupancy, i, cfg) for i in range(cfg.bins)]
    return VoxelGraphList(cfg, stream.geometry, tuple(graphs))


# --------------------------------------------------------------------------
# JSON graph list files

def graphs_to_dict(glist: VoxelGraphList) -> dict:
    cfg = asdict(glist.cfg)
    cfg["scale"] = list(cfg["scale"])
    cfg["width"] = glist.geometry.width
    cfg["height"] = glist.geometry.height
    frames = []
    for g in glist.graphs:
        frames.append({
            "nodes": [{"coord": c, "feat": f} for c, f in zip(g.coords.tolist(), g.feats.tolist())],
            "edges": g.edges.tolist(),
            "weights": g.weights.tolist(),
        })
    return {"cfg": cfg, "frames": frames}


def graphs_from_dict(doc: dict) -> VoxelGraphList:
    try:
        raw = dict(doc["cfg"])
        geometry = SensorGeometry(int(raw.pop("width")), int(raw.pop("height")))
        cfg = GraphConfig(**raw)
        graphs = []
        for fr in doc["frames"]:
            m = len(fr["nodes"])
            if m == 0:
                graphs.append(VoxelGraph.empty(cfg.points))
                continue
            coords = np.array([n["coord"] for n in fr["nodes"]], dtype=np.int64).reshape(m, 3)
            feats = np.array([n["feat"] for n in fr["nodes"]], dtype=np.int8).reshape(m, cfg.points)
            edges = np.array(fr["edges"], dtype=np.int64).reshape(-1, 2)
            weights = np.array(fr["weights"], dtype=np.float64).reshape(-1)
            if len(edges) != len(weights):
                raise GraphFormatError("edge and weight counts differ")
            if len(edges) and (edges.min() < 0 or edges.max() >= m):
                raise GraphFormatError("edge index out of range")
            graphs.append(VoxelGraph(coords, feats, edges, weights))
    except (KeyError, TypeError) as exc:
        raise GraphFormatError(f"malformed graph list: {exc}") from None
    if len(graphs) != cfg.bins:
        raise GraphFormatError(f"expected {cfg.bins} frames, found {len(graphs)}")
    return VoxelGraphList(cfg, geometry, tuple(graphs))


def write_graphs(glist: VoxelGraphList, path) -> None:
    Path(path).write_text(json.dumps(graphs_to_dict(glist), separators=(",", ":")), encoding="utf-8")


def read_graphs(path) -> VoxelGraphList:
    return graphs_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
