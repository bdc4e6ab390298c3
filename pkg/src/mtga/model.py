"""The dual-branch lip-reading network.

Frame branch: stem conv then one ResBlock per fusion layer.  Graph branch:
one GCNBlock (two GMMConvs with a residual) per fusion layer.  At every
layer the graph features of frame t are pooled, projected and broadcast onto
frame t's feature map and merged with it; the fused map feeds the next
ResBlock.  The temporal head pools the fused maps spatially, appends a
positional encoding computed by a GMMConv over voxel coordinates, and
classifies with a bidirectional GRU, scaled dot-product self-attention and
temporal average pooling.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import NamedTuple, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Module, Parameter, Tensor
from .events import EventStream
from .frames import FrameConfig, build_frames
from .graphs import GraphConfig, VoxelGraphList, build_graph_list

FUSION_MODES = ("aligned", "fixed_weight", "attention")
HEAD_ORDERS = ("gru_first", "attention_first")


class ConfigurationError(ValueError):
    pass


class AlignmentError(ValueError):
    pass


class GraphError(ValueError):
    pass


def _per_stage(value, n: int, name: str) -> tuple:
    if isinstance(value, int):
        return (value,) * n
    value = tuple(int(v) for v in value)
    if len(value) != n:
        raise ConfigurationError(f"{name} needs {n} entries, got {len(value)}")
    return value


@dataclass
class ModelConfig:
    classes: int = 100
    fusion_layers: int = 4
    # representation
    bins: int = 60
    slices_per_bin: int = 3
    voxel_h: int = 4
    voxel_w: int = 4
    top_k: int = 32
    points: int = 16
    radius: float = 2.0
    # widths
    stem_channels: int = 16
    stem_stride: int = 2
    frame_channels: Sequence[int] | int = 16
    frame_strides: Sequence[int] | int = (2, 1, 1, 1)
    graph_channels: Sequence[int] | int = 16
    graph_map_channels: int = 8
    gmm_kernels: int = 4
    pos_channels: int = 8
    gru_hidden: int = 32
    attention_dim: int = 32
    # ablation toggles
    use_frame_branch: bool = True
    use_graph_branch: bool = True
    fusion_mode: str = "aligned"
    use_positional_encoding: bool = True
    use_self_attention: bool = True
    head_order: str = "gru_first"
    fixed_weight: float = 0.5

    def __post_init__(self):
        N = self.fusion_layers
        if N < 1:
            raise ConfigurationError("fusion_layers must be >= 1")
        if not (self.use_frame_branch or self.use_graph_branch):
            raise ConfigurationError("at least one branch must be enabled")
        if self.fusion_mode not in FUSION_MODES:
            raise ConfigurationError(f"fusion_mode must be one of {FUSION_MODES}")
        if self.head_order not in HEAD_ORDERS:
            raise ConfigurationError(f"head_order must be one of {HEAD_ORDERS}")
        if self.classes < 1 or self.gmm_kernels < 1:
            raise ConfigurationError("classes and gmm_kernels must be positive")
        strides = (self.frame_strides,) if isinstance(self.frame_strides, int) else tuple(self.frame_strides)
        self.frame_strides = (strides + (1,) * N)[:N]
        self.frame_channels = _per_stage(self.frame_channels, N, "frame_channels")
        self.graph_channels = _per_stage(self.graph_channels, N, "graph_channels")

    @property
    def fused(self) -> bool:
        return self.use_frame_branch and self.use_graph_branch

    def frame_config(self, geometry) -> FrameConfig:
        return FrameConfig(geometry=geometry, bins=self.bins)

    def graph_config(self) -> GraphConfig:
        return GraphConfig(
            bins=self.bins, slices_per_bin=self.slices_per_bin, voxel_h=self.voxel_h,
            voxel_w=self.voxel_w, top_k=self.top_k, points=self.points, radius=self.radius,
        )

    # checkpoint encoding: every field becomes a float vector entry
    def to_entries(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "fusion_mode":
                v = FUSION_MODES.index(v)
            elif f.name == "head_order":
                v = HEAD_ORDERS.index(v)
            out[f"config.{f.name}"] = np.atleast_1d(np.asarray(v, dtype=np.float32))
        return out

    @classmethod
    def from_entries(cls, state: dict) -> "ModelConfig":
        kwargs = {}
        for f in fields(cls):
            key = f"config.{f.name}"
            if key not in state:
                continue
            v = np.asarray(state[key]).reshape(-1)
            if f.name == "fusion_mode":
                kwargs[f.name] = FUSION_MODES[int(v[0])]
            elif f.name == "head_order":
                kwargs[f.name] = HEAD_ORDERS[int(v[0])]
            elif f.name in ("frame_channels", "frame_strides", "graph_channels"):
                kwargs[f.name] = tuple(int(x) for x in v)
            elif f.type in ("bool",) or isinstance(f.default, bool):
                kwargs[f.name] = bool(v[0])
            elif isinstance(f.default, float):
                kwargs[f.name] = float(v[0])
            else:
                kwargs[f.name] = int(v[0])
        return cls(**kwargs)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("frame_channels", "frame_strides", "graph_channels"):
            d[k] = list(d[k])
        return d


# --------------------------------------------------------------------------
# graph tensorization

class GraphBatch(NamedTuple):
    """Disjoint union of a graph list's T frames.

    Node rows are grouped by frame; ``slot`` places node r at padded
    position frame*top_k + rank so that per-frame (T, k, C) views with a
    validity mask can be formed.
    """

    feats: np.ndarray  # (n, K) polarity features
    coords: np.ndarray  # (n, 3) coordinates normalized to [0, 1]
    frame: np.ndarray  # (n,) frame index
    slot: np.ndarray  # (n,) padded slot
    edges: np.ndarray  # (E, 2) global node indices
    weights: np.ndarray  # (E,) edge distances
    counts: np.ndarray  # (T,) valid nodes per frame
    bins: int
    top_k: int

    @property
    def mask(self) -> np.ndarray:
        return np.arange(self.top_k)[None, :] < self.counts[:, None]


def tensorize_graphs(glist: VoxelGraphList, top_k: int | None = None) -> GraphBatch:
    cfg = glist.cfg
    k = top_k or cfg.top_k
    S, GY, GX = cfg.grid(glist.geometry)
    extent = np.array([S - 1, GX - 1, GY - 1], dtype=np.float64)
    extent[extent == 0] = 1.0
    feats, coords, frame, slot, edges, weights, counts = [], [], [], [], [], [], []
    offset = 0
    for i, g in enumerate(glist.graphs):
        m = g.num_nodes
        if m > k:
            raise GraphError(f"frame {i} has {m} nodes, more than top_k={k}")
        feats.append(g.feats.astype(np.float64))
        coords.append(g.coords / extent)
        frame.append(np.full(m, i))
        slot.append(i * k + np.arange(m))
        edges.append(g.edges + offset)
        weights.append(g.weights)
        counts.append(m)
        offset += m
    return GraphBatch(
        np.concatenate(feats).reshape(-1, cfg.points),
        np.concatenate(coords).reshape(-1, 3),
        np.concatenate(frame).astype(np.int64),
        np.concatenate(slot).astype(np.int64),
        np.concatenate(edges).reshape(-1, 2).astype(np.int64),
        np.concatenate(weights).astype(np.float64),
        np.array(counts, dtype=np.int64),
        len(glist.graphs),
        k,
    )


# --------------------------------------------------------------------------
# layers

def _uniform(rng, shape, fan_in):
    bound = 1.0 / math.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, shape)


class Conv2d(Module):
    def __init__(self, rng, cin, cout, k=3, stride=1, padding=None):
        self.stride = stride
        self.padding = k // 2 if padding is None else padding
        self.weight = Parameter(_uniform(rng, (cout, cin, k, k), cin * k * k))
        self.bias = Parameter(np.zeros(cout))

    def __call__(self, x):
        return ad.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class Linear(Module):
    def __init__(self, rng, cin, cout, bias=True):
        self.weight = Parameter(_uniform(rng, (cout, cin), cin))
        self.bias = Parameter(_uniform(rng, (cout,), cin)) if bias else None

    def __call__(self, x):
        return ad.linear(x, self.weight, self.bias)


class BatchNorm(Module):
    _buffers = ("running_mean", "running_var")

    def __init__(self, channels, momentum=0.1, eps=1e-5):
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))
        dtype = ad.get_default_dtype()
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.momentum = momentum
        self.eps = eps

    def __call__(self, x):
        return ad.batchnorm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                            self.training, self.momentum, self.eps)


class GMMConvParams(Module):
    """M Gaussian kernels over a scalar edge attribute, each with its own linear map."""

    def __init__(self, rng, cin, cout, kernels, radius):
        self.mu = Parameter(np.linspace(0.0, radius, kernels))
        self.sigma_inv = Parameter(np.ones(kernels))
        self.theta = Parameter(_uniform(rng, (kernels, cin, cout), cin * kernels))
        self.bias = Parameter(np.zeros(cout))

    @property
    def kernels(self) -> int:
        return self.mu.shape[0]

    def __call__(self, x, edges, edge_attr):
        return gmm_conv(x, edges, edge_attr, self)


def kernel_weights(edge_attr, params: GMMConvParams) -> Tensor:
    """(E, M) Gaussian weights exp(-0.5 * sigma_inv_m * (u_e - mu_m)^2)."""
    u = Tensor(np.asarray(edge_attr).reshape(-1, 1))
    d = u - params.mu.reshape(1, -1)
    return ad.exp(d * d * params.sigma_inv.reshape(1, -1) * -0.5)


def gmm_conv(x, edges, edge_attr, params: GMMConvParams) -> Tensor:
    """Mean-aggregated Gaussian-mixture graph convolution.

    y_i = bias + 1/max(1, |N(i)|) * sum_{j in N(i)} sum_m w_m(u_ij) * x_j @ theta_m,
    where an edge (i, j) carries the message from j to i.
    """
    x = ad.as_tensor(x)
    n = x.shape[0]
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    edge_attr = np.asarray(edge_attr, dtype=np.float64).reshape(-1)
    M, cin, cout = params.theta.shape
    if x.ndim != 2 or x.shape[1] != cin:
        raise ad.DimensionError(f"gmm_conv: node features {x.shape} vs theta {params.theta.shape}")
    if len(edge_attr) != len(edges):
        raise GraphError(f"{len(edges)} edges but {len(edge_attr)} edge attributes")
    if len(edges) and (edges.min() < 0 or edges.max() >= n):
        raise GraphError(f"edge index out of range for {n} nodes")
    if len(edges) == 0:
        return Tensor(np.zeros((n, cout))) + params.bias
    dst, src = edges[:, 0], edges[:, 1]
    theta = params.theta.transpose(1, 0, 2).reshape(cin, M * cout)
    xt = ad.matmul(x, theta)  # (n, M*cout)
    msg = ad.gather_rows(xt, src).reshape(-1, M, cout)
    w = kernel_weights(edge_attr, params).reshape(-1, M, 1)
    msg = ad.sum(msg * w, axis=1)  # (E, cout)
    agg = ad.scatter_add_rows(msg, dst, n)
    deg = np.bincount(dst, minlength=n).astype(np.float64)
    agg = agg * Tensor(1.0 / np.maximum(deg, 1.0)).reshape(-1, 1)
    return agg + params.bias


class GCNBlock(Module):
    """res = GMMConv(x); out = ELU(res + GMMConv(ELU(BN(res))))."""

    def __init__(self, rng, cin, cout, kernels, radius):
        self.conv_in = GMMConvParams(rng, cin, cout, kernels, radius)
        self.bn = BatchNorm(cout)
        self.conv_res = GMMConvParams(rng, cout, cout, kernels, radius)

    def __call__(self, x, edges, edge_attr):
        res = self.conv_in(x, edges, edge_attr)
        if res.shape[0] == 0:
            return res
        inner = self.conv_res(ad.elu(self.bn(res)), edges, edge_attr)
        return ad.elu(res + inner)


class ResBlock(Module):
    """out = shortcut(x) + BN(conv(ELU(BN(conv(x))))).

    No activation follows the sum, so a zero second conv makes the block an
    exact identity when the shortcut is.
    """

    def __init__(self, rng, cin, cout, stride=1):
        self.conv1 = Conv2d(rng, cin, cout, 3, stride)
        self.bn1 = BatchNorm(cout)
        self.conv2 = Conv2d(rng, cout, cout, 3, 1)
        self.bn2 = BatchNorm(cout)
        if stride != 1 or cin != cout:
            self.proj = Conv2d(rng, cin, cout, 1, stride, padding=0)
            self.proj_bn = BatchNorm(cout)
        else:
            self.proj = None
            self.proj_bn = None

    def __call__(self, x):
        h = ad.elu(self.bn1(self.conv1(x)))
        h = self.bn2(self.conv2(h))
        short = x if self.proj is None else self.proj_bn(self.proj(x))
        return short + h


class FrameStem(Module):
    def __init__(self, rng, cin, cout, stride):
        self.conv = Conv2d(rng, cin, cout, 3, stride)
        self.bn = BatchNorm(cout)

    def __call__(self, x):
        return ad.elu(self.bn(self.conv(x)))


def pad_nodes(node_feats: Tensor, batch: GraphBatch) -> Tensor:
    """Compact (n, C) node rows -> zero-padded (T, k, C)."""
    C = node_feats.shape[1]
    padded = ad.scatter_add_rows(node_feats, batch.slot, batch.bins * batch.top_k)
    return padded.reshape(batch.bins, batch.top_k, C)


def masked_mean(padded: Tensor, mask: np.ndarray) -> Tensor:
    """Mean over valid nodes per frame; a frame without nodes yields zeros."""
    m = mask.astype(np.float64)
    total = ad.sum(padded * Tensor(m[:, :, None]), axis=1)
    count = np.maximum(m.sum(axis=1, keepdims=True), 1.0)
    return total * Tensor(1.0 / count)


class GraphToMap(Module):
    """Masked node mean -> linear -> broadcast over the frame feature map."""

    def __init__(self, rng, cin, cout):
        self.proj = Linear(rng, cin, cout)

    def __call__(self, padded: Tensor, mask: np.ndarray, spatial: tuple) -> Tensor:
        pooled = masked_mean(padded, mask)
        z = self.proj(pooled)  # (T, C')
        T, Cp = z.shape
        H, W = spatial
        return z.reshape(T, Cp, 1, 1) * Tensor(np.ones((1, 1, H, W)))


class FusionModule(Module):
    """F_res = Concat(F_f, G); out = ELU(BN(Conv1x1(F_res))) + F_res."""

    def __init__(self, rng, channels):
        self.conv = Conv2d(rng, channels, channels, 1, 1, padding=0)
        self.bn = BatchNorm(channels)

    def __call__(self, frame_feats: Tensor, graph_map: Tensor) -> Tensor:
        if frame_feats.shape[0] != graph_map.shape[0]:
            raise AlignmentError(
                f"temporal lengths differ: frames {frame_feats.shape[0]} vs graphs {graph_map.shape[0]}")
        if frame_feats.shape[2:] != graph_map.shape[2:]:
            raise ad.DimensionError(
                f"spatial shapes differ: {frame_feats.shape} vs {graph_map.shape}")
        res = ad.concat([frame_feats, graph_map], axis=1)
        return ad.elu(self.bn(self.conv(res))) + res


class BiGRU(Module):
    def __init__(self, rng, cin, hidden):
        self.hidden = hidden
        self.fwd = [Parameter(_uniform(rng, s, hidden)) for s in
                    ((3 * hidden, cin), (3 * hidden, hidden), (3 * hidden,), (3 * hidden,))]
        self.bwd = [Parameter(_uniform(rng, s, hidden)) for s in
                    ((3 * hidden, cin), (3 * hidden, hidden), (3 * hidden,), (3 * hidden,))]

    def _run(self, x: Tensor, params, reverse: bool):
        T = x.shape[0]
        h = Tensor(np.zeros((1, self.hidden)))
        out = [None] * T
        steps = range(T - 1, -1, -1) if reverse else range(T)
        for t in steps:
            h = ad.gru_cell(x[t:t + 1], h, *params)
            out[t] = h
        return ad.concat(out, axis=0)

    def __call__(self, x: Tensor) -> Tensor:
        """(T, D) -> (T, 2*hidden): forward and backward states per step."""
        return ad.concat([self._run(x, self.fwd, False), self._run(x, self.bwd, True)], axis=1)


class SelfAttention(Module):
    """Softmax(Q K^T / sqrt(d_k)) V over the time axis."""

    def __init__(self, rng, cin, d_k, d_v=None):
        self.d_k = d_k
        self.q = Linear(rng, cin, d_k, bias=False)
        self.k = Linear(rng, cin, d_k, bias=False)
        self.v = Linear(rng, cin, d_v or d_k, bias=False)

    def __call__(self, x: Tensor) -> Tensor:
        scores = ad.matmul(self.q(x), self.k(x).T) * (1.0 / math.sqrt(self.d_k))
        return ad.matmul(ad.softmax(scores, axis=-1), self.v(x))


class ChannelAttentionFusion(Module):
    """Gate concatenated branch features by a sigmoid of their time-pooled summary."""

    def __init__(self, rng, channels):
        self.gate = Linear(rng, channels, channels)

    def __call__(self, feats: Tensor) -> Tensor:
        g = ad.sigmoid(self.gate(ad.mean(feats, axis=0, keepdims=True)))
        return feats * g


# --------------------------------------------------------------------------
# the model

class Sample(NamedTuple):
    frames: np.ndarray  # (T, H, W)
    graphs: GraphBatch


class MTGAModel(Module):
    def __init__(self, cfg: ModelConfig | None = None, seed: int = 0):
        cfg = cfg or ModelConfig()
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        N, M, R = cfg.fusion_layers, cfg.gmm_kernels, cfg.radius

        self.stem = FrameStem(rng, 1, cfg.stem_channels, cfg.stem_stride)
        self.res_blocks, self.gcn_blocks, self.graph_maps, self.fusions = [], [], [], []
        c_frame = cfg.stem_channels
        c_graph = cfg.points
        for i in range(N):
            cf, cg = cfg.frame_channels[i], cfg.graph_channels[i]
            self.res_blocks.append(ResBlock(rng, c_frame, cf, cfg.frame_strides[i]))
            self.gcn_blocks.append(GCNBlock(rng, c_graph, cg, M, R))
            self.graph_maps.append(GraphToMap(rng, cg, cfg.graph_map_channels))
            self.fusions.append(FusionModule(rng, cf + cfg.graph_map_channels))
            c_frame = cf + cfg.graph_map_channels if cfg.fused and cfg.fusion_mode == "aligned" else cf
            c_graph = cg

        c_frame_last = cfg.frame_channels[-1]
        c_graph_last = cfg.graph_channels[-1]
        # pooled-feature fusion variants
        self.graph_pool_proj = Linear(rng, c_graph_last, c_frame_last)
        self.channel_attention = ChannelAttentionFusion(rng, 2 * c_frame_last)

        self.pos_encoder = GMMConvParams(rng, 3, cfg.pos_channels, M, R)
        d = self.feature_dim + (cfg.pos_channels if cfg.use_positional_encoding else 0)
        if cfg.head_order == "gru_first":
            self.gru = BiGRU(rng, d, cfg.gru_hidden)
            self.attention = SelfAttention(rng, 2 * cfg.gru_hidden, cfg.attention_dim)
            head_in = cfg.attention_dim if cfg.use_self_attention else 2 * cfg.gru_hidden
        else:
            self.attention = SelfAttention(rng, d, cfg.attention_dim, d_v=d)
            self.gru = BiGRU(rng, d, cfg.gru_hidden)
            head_in = 2 * cfg.gru_hidden
        self.fc = Linear(rng, head_in, cfg.classes)

    @property
    def feature_dim(self) -> int:
        """Width of the per-frame feature vector entering the temporal head."""
        cfg = self.cfg
        if not cfg.use_graph_branch:
            return cfg.frame_channels[-1]
        if not cfg.use_frame_branch:
            return cfg.graph_channels[-1]
        if cfg.fusion_mode == "aligned":
            return cfg.frame_channels[-1] + cfg.graph_map_channels
        if cfg.fusion_mode == "fixed_weight":
            return cfg.frame_channels[-1]
        return 2 * cfg.frame_channels[-1]

    # -- front end --------------------------------------------------------
    def prepare(self, stream: EventStream, threads: int = 1) -> Sample:
        cfg = self.cfg
        frames = build_frames(stream, cfg.frame_config(stream.geometry), threads=threads)
        glist = build_graph_list(stream, cfg.graph_config(), threads=threads)
        return Sample(frames.data, tensorize_graphs(glist, cfg.top_k))

    def _check(self, sample: Sample) -> None:
        T = self.cfg.bins
        if sample.frames.shape[0] != T or sample.graphs.bins != T:
            raise AlignmentError(
                f"representations must share T={T}: frames {sample.frames.shape[0]}, "
                f"graphs {sample.graphs.bins}")
        if sample.graphs.feats.shape[1] != self.cfg.points:
            raise ConfigurationError(
                f"graph nodes carry {sample.graphs.feats.shape[1]} points, model expects {self.cfg.points}")

    def graph_layer(self, i: int, g: Tensor, batch: GraphBatch) -> Tensor:
        return self.gcn_blocks[i](g, batch.edges, batch.weights)

    def iterative_fusion(self, sample: Sample) -> Tensor:
        """Returns the fused (T, C, H', W') map; graph-only models return (T, C) instead."""
        cfg = self.cfg
        batch = sample.graphs
        mask = batch.mask
        g = Tensor(batch.feats)
        if not cfg.use_frame_branch:
            for i in range(cfg.fusion_layers):
                g = self.graph_layer(i, g, batch)
            return masked_mean(pad_nodes(g, batch), mask)

        f = self.stem(Tensor(sample.frames[:, None, :, :]))
        for i in range(cfg.fusion_layers):
            f = self.res_blocks[i](f)
            if cfg.use_graph_branch:
                g = self.graph_layer(i, g, batch)
                if cfg.fusion_mode == "aligned":
                    gmap = self.graph_maps[i](pad_nodes(g, batch), mask, f.shape[2:])
                    f = self.fusions[i](f, gmap)
        if cfg.use_graph_branch and cfg.fusion_mode != "aligned":
            f_vec = ad.mean(f, axis=(2, 3))
            g_vec = self.graph_pool_proj(masked_mean(pad_nodes(g, batch), mask))
            if cfg.fusion_mode == "fixed_weight":
                w = cfg.fixed_weight
                return f_vec * w + g_vec * (1.0 - w)
            return self.channel_attention(ad.concat([f_vec, g_vec], axis=1))
        return f

    def positional_encoding(self, batch: GraphBatch) -> Tensor:
        enc = self.pos_encoder(Tensor(batch.coords), batch.edges, batch.weights)
        if enc.shape[0] == 0:
            return Tensor(np.zeros((batch.bins, self.cfg.pos_channels)))
        return masked_mean(pad_nodes(enc, batch), batch.mask)

    # -- back end ---------------------------------------------------------
    def temporal_head(self, feats: Tensor, pos: Tensor | None) -> Tensor:
        """(T, C) features (+ (T, C_p) encoding) -> class logits."""
        cfg = self.cfg
        if feats.ndim == 4:
            feats = ad.mean(feats, axis=(2, 3))
        x = feats if pos is None else ad.concat([pos, feats], axis=1)
        if cfg.head_order == "gru_first":
            h = self.gru(x)
            if cfg.use_self_attention:
                h = self.attention(h)
        else:
            if cfg.use_self_attention:
                x = x * self.attention(x)
            h = self.gru(x)
        return self.fc(ad.mean(h, axis=0))

    def logits(self, sample: Sample) -> Tensor:
        self._check(sample)
        feats = self.iterative_fusion(sample)
        pos = self.positional_encoding(sample.graphs) if self.cfg.use_positional_encoding else None
        return self.temporal_head(feats, pos)

    def forward(self, sample: Sample | EventStream) -> Tensor:
        if isinstance(sample, EventStream):
            sample = self.prepare(sample)
        return ad.softmax(self.logits(sample), axis=-1)

    __call__ = forward

    def predict(self, sample) -> np.ndarray:
        training = self.training
        self.eval()
        try:
            with ad.no_grad():
                return self.forward(sample).data
        finally:
            self.train(training)

    def checkpoint_state(self) -> dict:
        state = dict(self.cfg.to_entries())
        state.update(self.state_dict())
        return state


def load_model(state: dict) -> MTGAModel:
    cfg = ModelConfig.from_entries(state)
    model = MTGAModel(cfg)
    model.load_state_dict(state)
    return model


def train_step(batch: Sequence[tuple], model: MTGAModel, optimizer: ad.SGD) -> float:
    """One momentum-SGD step on the mean cross-entropy of ``batch`` [(sample, label), ...]."""
    model.train()
    optimizer.zero_grad()
    logits = ad.stack([model.logits(s) for s, _ in batch], axis=0)
    labels = np.array([label for _, label in batch])
    loss = ad.cross_entropy(logits, labels)
    loss.backward()
    optimizer.step()
    return loss.item()


def batch_loss(batch, model: MTGAModel) -> float:
    with ad.no_grad():
        logits = ad.stack([model.logits(s) for s, _ in batch], axis=0)
        return ad.cross_entropy(logits, np.array([lab for _, lab in batch])).item()
