"""Brute-force reference implementations used by the tests and ``--oracle`` runs.

Nothing here shares code with the fast paths: timestamps are normalized with
exact integer arithmetic (Python ints, no overflow), voxels are tallied in dictionaries, top-k is a full sort and
edges come from a double loop.  Everything is float64.
"""
from __future__ import annotations

import math

import numpy as np

from .events import EventStream
from .frames import EventFrameTensor, FrameConfig
from .graphs import GraphConfig, VoxelGraph, VoxelGraphList


def naive_frames(stream: EventStream, cfg: FrameConfig) -> EventFrameTensor:
    T, H, W = cfg.bins, cfg.geometry.height, cfg.geometry.width
    out = np.zeros((T, 2, H, W) if cfg.split_polarity else (T, H, W), dtype=np.float64)
    events = list(stream)
    if not events:
        return EventFrameTensor(out)
    t_first, t_last = events[0].t, events[-1].t
    span = t_last - t_first
    for ev in events:
        # position = num / span exactly; split into integer bin and remainder
        num = (T - 1) * (ev.t - t_first) if span else 0
        low, rem = divmod(num, span) if span else (0, 0)
        shares = [(low, 1.0 - rem / span if span else 1.0)]
        if rem:
            shares.append((low + 1, rem / span))
        for b, w in shares:
            if cfg.split_polarity:
                out[b, 0 if ev.p > 0 else 1, ev.y, ev.x] += w
            else:
                out[b, ev.y, ev.x] += ev.p * w
    return EventFrameTensor(out, t_first, t_last)


def naive_voxel_counts(stream: EventStream, cfg: GraphConfig) -> dict:
    """(t_slice, x_vox, y_vox) -> list of event positions, by brute force."""
    events = list(stream)
    cells: dict = {}
    if not events:
        return cells
    t_first, t_last = events[0].t, events[-1].t
    slices = cfg.bins * cfg.slices_per_bin
    for idx, ev in enumerate(events):
        if t_last == t_first:
            s = 0
        else:
            s = min((ev.t - t_first) * slices // (t_last - t_first), slices - 1)
        key = (s, ev.x // cfg.voxel_w, ev.y // cfg.voxel_h)
        cells.setdefault(key, []).append(idx)
    return cells


def naive_graphs(stream: EventStream, cfg: GraphConfig) -> VoxelGraphList:
    cells = naive_voxel_counts(stream, cfg)
    polarity = [ev.p for ev in stream]
    n = cfg.slices_per_bin
    by_frame: dict = {}
    for key in cells:
        by_frame.setdefault(key[0] // n, []).append(key)
    graphs = []
    for frame in range(cfg.bins):
        candidates = by_frame.get(frame, [])
        candidates.sort(key=lambda key: (-len(cells[key]), key[0], key[2], key[1]))
        chosen = candidates[: cfg.top_k]
        if not chosen:
            graphs.append(VoxelGraph.empty(cfg.points))
            continue
        feats = []
        for key in chosen:
            pol = [polarity[i] for i in cells[key][: cfg.points]]
            feats.append(pol + [0] * (cfg.points - len(pol)))
        edges, weights = [], []
        for i, a in enumerate(chosen):
            for j, b in enumerate(chosen):
                if i == j:
                    continue
                d = math.sqrt(sum(((pa - pb) * s) ** 2 for pa, pb, s in zip(a, b, cfg.scale)))
                if 0 < d < cfg.radius:
                    edges.append((i, j))
                    weights.append(d)
        graphs.append(VoxelGraph(
            np.array(chosen, dtype=np.int64),
            np.array(feats, dtype=np.int8),
            np.array(edges, dtype=np.int64).reshape(-1, 2),
            np.array(weights, dtype=np.float64),
            np.array([len(cells[key]) for key in chosen], dtype=np.int64),
        ))
    return VoxelGraphList(cfg, stream.geometry, tuple(graphs))


def dense_gmm_conv(node_feats, edges, edge_attr, mu, sigma_inv, theta, bias) -> np.ndarray:
    """Materializes the full (n, n, M) kernel-weight tensor."""
    x = np.asarray(node_feats, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    sigma_inv = np.asarray(sigma_inv, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    n = x.shape[0]
    adjacency = np.zeros((n, n, len(mu)))
    connected = np.zeros((n, n), dtype=bool)
    for (i, j), u in zip(np.asarray(edges).reshape(-1, 2), np.asarray(edge_attr).reshape(-1)):
        adjacency[i, j] = np.exp(-0.5 * sigma_inv * (u - mu) ** 2)
        connected[i, j] = True
    degree = np.maximum(connected.sum(axis=1), 1)
    out = np.einsum("ijm,jc,mcd->id", adjacency, x, theta) / degree[:, None]
    return out + np.asarray(bias, dtype=np.float64)[None, :]


def gmm_params_arrays(params) -> tuple:
    """Unpack a GMMConvParams module into plain float64 arrays for dense_gmm_conv."""
    return tuple(np.asarray(t.data, dtype=np.float64)
                 for t in (params.mu, params.sigma_inv, params.theta, params.bias))
