"""End-to-end acceptance gate: one test per criterion, each reported as PASS/FAIL.

Run with ``pytest tests/test_acceptance.py -s`` to see the per-criterion
lines as they happen; they are also repeated in the terminal summary.
"""
import subprocess
import sys
import time

import numpy as np
import pytest

from mtga import autodiff as ad
from mtga.cli import run_bench, scaling_ratio
from mtga.events import EventStream, SensorGeometry
from mtga.frames import FrameConfig, build_frames
from mtga.graphs import GraphConfig, build_graph_list
from mtga.model import (
    BiGRU, ChannelAttentionFusion, FusionModule, GCNBlock, GMMConvParams, GraphToMap, MTGAModel,
    GraphBatch, ModelConfig, ResBlock, SelfAttention, gmm_conv, kernel_weights, masked_mean, pad_nodes, train_step,
)
from mtga.oracle import dense_gmm_conv, gmm_params_arrays, naive_frames, naive_graphs
from mtga.testing import (
    criterion, gradient_errors, graph_list_mismatch, module_gradient_errors, random_stream,
)
from mtga.training import accuracy, toy_config, toy_streams, train_toy

pytestmark = pytest.mark.slow


def frame_error(fast, ref) -> float:
    """Largest deviation relative to the reference tensor's magnitude."""
    ref = np.asarray(ref, dtype=np.float64)
    return float(np.max(np.abs(fast - ref), initial=0.0) / max(1.0, np.max(np.abs(ref), initial=0.0)))


def test_criterion_01_oracle_equivalence():
    with criterion(1, "representation oracle equivalence, 200 streams"):
        rng = np.random.default_rng(101)
        start = time.perf_counter()
        for case in range(200):
            s = random_stream(rng, max_events=10_000, max_side=128)
            fcfg = FrameConfig(s.geometry, bins=60)
            err = frame_error(build_frames(s, fcfg).data, naive_frames(s, fcfg).data)
            assert err <= 1e-5, f"case {case}: frame error {err:.3g}"
            gcfg = GraphConfig()
            bad = graph_list_mismatch(build_graph_list(s, gcfg), naive_graphs(s, gcfg), atol=1e-9)
            assert bad is None, f"case {case}: {bad}"
        elapsed = time.perf_counter() - start
        assert elapsed < 60.0, f"took {elapsed:.1f}s"


def test_criterion_02_mass_and_time_shift():
    with criterion(2, "mass conservation and time-shift invariance"):
        rng = np.random.default_rng(202)
        for case in range(200):
            s = random_stream(rng, max_events=10_000, max_side=128)
            bins = int(rng.integers(2, 121))
            f = build_frames(s, FrameConfig(s.geometry, bins=bins)).data
            total, expected = float(f.astype(np.float64).sum()), float(s.p.sum())
            assert abs(total - expected) <= 1e-5 * max(1.0, abs(expected)), \
                f"case {case}: sum {total} vs {expected}"
            if case % 4 == 0:
                shifted = s.shifted(int(rng.integers(1, 10**12)))
                assert np.array_equal(f, build_frames(shifted, FrameConfig(s.geometry, bins=bins)).data)
                gcfg = GraphConfig(bins=bins)
                assert graph_list_mismatch(build_graph_list(s, gcfg), build_graph_list(shifted, gcfg), 0.0) is None


def test_criterion_03_alignment():
    with criterion(3, "alignment invariant, 1000 cases"):
        rng = np.random.default_rng(303)
        for case in range(1000):
            s = random_stream(rng, max_events=2000, max_side=64)
            cfg = GraphConfig(bins=int(rng.integers(1, 61)), slices_per_bin=int(rng.integers(1, 6)),
                              voxel_h=int(rng.integers(1, 9)), voxel_w=int(rng.integers(1, 9)),
                              top_k=int(rng.integers(1, 65)))
            glist = build_graph_list(s, cfg)
            assert len(glist) == cfg.bins
            for f, g in enumerate(glist):
                assert (g.coords[:, 0] // cfg.slices_per_bin == f).all(), f"case {case} frame {f}"


def test_criterion_04_gmm_kernel_equivalence():
    with criterion(4, "gmm_conv vs dense reference, 100 graphs"):
        rng = np.random.default_rng(404)
        for case in range(100):
            n, M = int(rng.integers(1, 51)), int(rng.integers(1, 5))
            cin, cout = int(rng.integers(1, 17)), int(rng.integers(1, 17))
            params = GMMConvParams(rng, cin, cout, M, 2.0)
            params.sigma_inv.data = rng.uniform(0.2, 4.0, M).astype(params.sigma_inv.data.dtype)
            params.bias.data = rng.normal(size=cout).astype(params.bias.data.dtype)
            mask = (rng.random((n, n)) < rng.uniform(0, 0.5)) & ~np.eye(n, dtype=bool)
            edges = np.argwhere(mask)
            attr = rng.uniform(0.0, 3.0, len(edges))
            x = rng.normal(size=(n, cin))
            fast = gmm_conv(x, edges, attr, params).data
            ref = dense_gmm_conv(x, edges, attr, *gmm_params_arrays(params))
            err = float(np.max(np.abs(fast - ref)))
            assert err <= 1e-5, f"case {case}: {err:.3g}"


# -- criterion 5 -----------------------------------------------------------

def _t(rng, *shape, positive=False):
    data = rng.uniform(0.5, 2.0, shape) if positive else rng.normal(size=shape)
    return ad.Tensor(data, requires_grad=True)


def primitive_cases(rng):
    """(name, fn, inputs) for every differentiable primitive."""
    idx = rng.integers(0, 4, 7)
    labels = rng.integers(0, 5, 3)
    rm, rv = rng.normal(size=3), rng.uniform(0.5, 2.0, 3)
    edges = np.array([[0, 1], [1, 0], [1, 2], [2, 2], [3, 0]])
    attr = rng.uniform(0.2, 2.0, len(edges))
    gmm = GMMConvParams(rng, 3, 2, 3, 2.0)
    cases = [
        ("add", ad.add, [_t(rng, 3, 4), _t(rng, 4)]),
        ("sub", ad.sub, [_t(rng, 3, 4), _t(rng, 3, 1)]),
        ("mul", ad.mul, [_t(rng, 2, 3), _t(rng, 2, 3)]),
        ("div", ad.div, [_t(rng, 2, 3), _t(rng, 3, positive=True)]),
        ("exp", ad.exp, [_t(rng, 5)]),
        ("log", ad.log, [_t(rng, 5, positive=True)]),
        ("elu", ad.elu, [_t(rng, 4, 3)]),
        ("sigmoid", ad.sigmoid, [_t(rng, 4, 3)]),
        ("tanh", ad.tanh, [_t(rng, 4, 3)]),
        ("sum", lambda x: ad.sum(x, axis=1), [_t(rng, 3, 4)]),
        ("mean", lambda x: ad.mean(x, axis=(0, 2)), [_t(rng, 2, 3, 4)]),
        ("max", lambda x: ad.max(x, axis=0), [_t(rng, 4, 3)]),
        ("reshape", lambda x: ad.reshape(x, (6, 2)), [_t(rng, 3, 4)]),
        ("transpose", lambda x: ad.transpose(x, (2, 0, 1)), [_t(rng, 2, 3, 4)]),
        ("getitem", lambda x: x[1:, ::2], [_t(rng, 3, 4)]),
        ("concat", lambda a, b: ad.concat([a, b], axis=1), [_t(rng, 2, 3), _t(rng, 2, 1)]),
        ("stack", lambda a, b: ad.stack([a, b], axis=1), [_t(rng, 2, 3), _t(rng, 2, 3)]),
        ("softmax", lambda x: ad.softmax(x, axis=1), [_t(rng, 3, 5)]),
        ("log_softmax", lambda x: ad.log_softmax(x, axis=1), [_t(rng, 3, 5)]),
        ("cross_entropy", lambda z: ad.cross_entropy(z, labels), [_t(rng, 3, 5)]),
        ("matmul", ad.matmul, [_t(rng, 3, 4), _t(rng, 4, 2)]),
        ("linear", ad.linear, [_t(rng, 3, 4), _t(rng, 2, 4), _t(rng, 2)]),
        ("conv2d", lambda x, w, b: ad.conv2d(x, w, b, stride=2, padding=1),
         [_t(rng, 2, 2, 5, 5), _t(rng, 3, 2, 3, 3), _t(rng, 3)]),
        ("batchnorm_train", lambda x, g, b: ad.batchnorm(x, g, b, training=True),
         [_t(rng, 4, 3, 2), _t(rng, 3), _t(rng, 3)]),
        ("batchnorm_eval", lambda x, g, b: ad.batchnorm(x, g, b, rm, rv, training=False),
         [_t(rng, 4, 3, 2), _t(rng, 3), _t(rng, 3)]),
        ("gather_rows", lambda x: ad.gather_rows(x, idx), [_t(rng, 4, 3)]),
        ("scatter_add_rows", lambda x: ad.scatter_add_rows(x, idx, 4), [_t(rng, 7, 3)]),
        ("gru_cell", ad.gru_cell, [_t(rng, 2, 3), _t(rng, 2, 4), _t(rng, 12, 3), _t(rng, 12, 4),
                                   _t(rng, 12), _t(rng, 12)]),
        ("gmm_conv", lambda x: gmm_conv(x, edges, attr, gmm), [_t(rng, 4, 3)]),
    ]
    return cases, gmm, (edges, attr)


class Bundle(ad.Module):
    def __init__(self, **parts):
        for k, v in parts.items():
            setattr(self, k, v)


def composite_cases(rng):
    """(name, module, fn) for every composite block; fn() returns a Tensor."""
    out = []
    n = 6
    edges = np.argwhere(~np.eye(n, dtype=bool) & (rng.random((n, n)) < 0.5))
    attr = rng.uniform(0.2, 2.0, len(edges))
    x = rng.normal(size=(n, 3))
    gcn = GCNBlock(rng, 3, 4, 3, 2.0)
    out.append(("GCNBlock", gcn, lambda: gcn(x, edges, attr)))

    fusion = FusionModule(rng, 5)
    ff, gm = rng.normal(size=(4, 3, 3, 3)), rng.normal(size=(4, 2, 3, 3))
    out.append(("fusion module", fusion, lambda: fusion(ad.Tensor(ff), ad.Tensor(gm))))

    res = ResBlock(rng, 2, 3, 2)
    fx = rng.normal(size=(3, 2, 6, 6))
    out.append(("ResBlock", res, lambda: res(ad.Tensor(fx))))

    # iterative fusion at T=4 with 8x8 frames
    cfg = ModelConfig(classes=3, fusion_layers=4, bins=4, slices_per_bin=3, voxel_h=2, voxel_w=2,
                      top_k=6, points=4, stem_channels=3, frame_channels=3, graph_channels=3,
                      graph_map_channels=2, gmm_kernels=2, pos_channels=3, gru_hidden=3, attention_dim=3)
    model = MTGAModel(cfg, seed=5)
    sample = model.prepare(_stream_8x8(rng))
    assert sample.frames.shape == (4, 8, 8)
    fusion_parts = Bundle(stem=model.stem, res=model.res_blocks, gcn=model.gcn_blocks,
                          maps=model.graph_maps, fusions=model.fusions)
    out.append(("iterative fusion T=4 8x8", fusion_parts, lambda: model.iterative_fusion(sample)))
    out.append(("positional encoding", model.pos_encoder, lambda: model.positional_encoding(sample.graphs)))

    for order in ("gru_first", "attention_first"):
        hcfg = ModelConfig(**{**cfg.to_dict(), "head_order": order})
        head_model = MTGAModel(hcfg, seed=6)
        feats = rng.normal(size=(4, head_model.feature_dim))
        pos = rng.normal(size=(4, hcfg.pos_channels))
        head = Bundle(gru=head_model.gru, attention=head_model.attention, fc=head_model.fc)
        out.append((f"temporal head ({order})", head,
                    lambda m=head_model, f=feats, p=pos: m.temporal_head(ad.Tensor(f), ad.Tensor(p))))

    g2m = GraphToMap(rng, 3, 2)
    counts = np.array([2, 0, 3])
    slot = np.array([0, 1, 8, 9, 10])
    batch = GraphBatch(np.zeros((5, 1)), np.zeros((5, 3)), np.array([0, 0, 2, 2, 2]), slot,
                       np.zeros((0, 2), np.int64), np.zeros(0), counts, 3, 4)
    nodes = rng.normal(size=(5, 3))
    out.append(("graph-to-map", g2m, lambda: g2m(pad_nodes(ad.Tensor(nodes), batch), batch.mask, (2, 2))))
    pooled = Bundle(nodes=ad.Parameter(nodes))
    out.append(("masked mean", pooled, lambda: masked_mean(pad_nodes(pooled.nodes, batch), batch.mask)))

    gru = BiGRU(rng, 3, 4)
    seq = rng.normal(size=(5, 3))
    out.append(("BiGRU", gru, lambda: gru(ad.Tensor(seq))))
    att = SelfAttention(rng, 3, 4, 2)
    out.append(("self-attention", att, lambda: att(ad.Tensor(seq))))
    caf = ChannelAttentionFusion(rng, 3)
    out.append(("channel attention fusion", caf, lambda: caf(ad.Tensor(seq))))
    kw = GMMConvParams(rng, 1, 1, 4, 2.0)
    out.append(("kernel weights", kw, lambda: kernel_weights(attr, kw)))
    return out


def _stream_8x8(rng):
    g = SensorGeometry(8, 8)
    n = 600
    t = np.sort(rng.integers(0, 40_000, n))
    return EventStream(g, t, rng.integers(0, 8, n), rng.integers(0, 8, n), rng.choice([-1, 1], n))


def test_criterion_05_gradient_suite():
    with criterion(5, "finite-difference gradient suite (float64, eps=1e-4, rel err < 1e-4)"):
        start = time.perf_counter()
        failures, checked = [], 0
        with ad.default_dtype(np.float64):
            rng = np.random.default_rng(505)
            cases, gmm, (edges, attr) = primitive_cases(rng)
            for name, fn, inputs in cases:
                for key, err in gradient_errors(fn, inputs, eps=1e-4).items():
                    checked += 1
                    if not err < 1e-4:
                        failures.append(f"{name}[{key}]={err:.2e}")
            x = rng.normal(size=(4, 3))
            for key, err in module_gradient_errors(gmm, lambda: gmm_conv(x, edges, attr, gmm), 1e-4).items():
                checked += 1
                if not err < 1e-4:
                    failures.append(f"gmm_conv[{key}]={err:.2e}")
            for name, module, fn in composite_cases(rng):
                module.train()
                for key, err in module_gradient_errors(module, fn, eps=1e-4).items():
                    checked += 1
                    if not err < 1e-4:
                        failures.append(f"{name}[{key}]={err:.2e}")
        elapsed = time.perf_counter() - start
        assert not failures, f"{len(failures)} of {checked} gradient checks failed: {failures[:8]}"
        assert elapsed < 300.0, f"took {elapsed:.1f}s"


def test_criterion_06_default_shape_contract():
    with criterion(6, "default configuration forward pass"):
        cfg = ModelConfig()
        assert (cfg.bins, cfg.slices_per_bin, cfg.top_k, cfg.points, cfg.classes) == (60, 3, 32, 16, 100)
        model = MTGAModel(cfg, seed=0)
        s = random_stream(np.random.default_rng(606), n=8000, max_side=128)
        probs = model.predict(s)
        assert probs.shape == (100,)
        assert (probs >= 0).all()
        assert abs(float(np.sum(probs, dtype=np.float64)) - 1.0) <= 1e-6


def test_criterion_07_toy_training():
    with criterion(7, "toy training: >=95% train within 300 steps, >=90% held-out"):
        start = time.perf_counter()
        result = train_toy(classes=2, steps=300, seed=1, target_accuracy=None, eval_every=300)
        held_out = [(result.model.prepare(s), c) for s, c in toy_streams(2, 20, seed=999)]
        test_acc = accuracy(result.model, held_out)
        elapsed = time.perf_counter() - start
        print(f"    train {100 * result.train_accuracy:.1f}%  held-out {100 * test_acc:.1f}%  "
              f"steps {len(result.losses)}  {elapsed:.0f}s")
        assert len(result.losses) <= 300
        assert result.train_accuracy >= 0.95, result.train_accuracy
        assert test_acc >= 0.90, test_acc
        assert elapsed < 600.0


ABLATIONS = {
    "M1": dict(use_positional_encoding=False, use_self_attention=False),
    "M2": dict(use_positional_encoding=True, use_self_attention=False),
    "M3": dict(use_positional_encoding=False, use_self_attention=True),
    "full": dict(use_positional_encoding=True, use_self_attention=True),
}


def test_criterion_08_ablation_structure():
    with criterion(8, "graph-branch gradients vanish when disabled; M1/M2/M3/full runnable"):
        streams = toy_streams(2, 1, seed=808)
        model = MTGAModel(toy_config(2, use_graph_branch=False), seed=0)
        sample = model.prepare(streams[0][0])
        model.zero_grad()
        ad.cross_entropy(model.logits(sample), [0]).backward()
        graph_side = [("gcn_blocks", model.gcn_blocks), ("graph_maps", model.graph_maps),
                      ("fusions", model.fusions), ("graph_pool_proj", model.graph_pool_proj),
                      ("channel_attention", model.channel_attention)]
        for name, part in graph_side:
            for blk in (part if isinstance(part, list) else [part]):
                for p in blk.parameters():
                    assert p.grad is None or not p.grad.any(), f"{name} received gradient"
        assert any(p.grad is not None and p.grad.any() for p in model.stem.parameters())

        widths = {}
        for tag, toggles in ABLATIONS.items():
            m = MTGAModel(toy_config(2, **toggles), seed=0)
            data = [(m.prepare(s), c) for s, c in streams]
            loss = train_step(data, m, ad.SGD(m.parameters(), lr=1e-3))
            probs = m.predict(data[0][0])
            assert np.isfinite(loss) and abs(float(probs.sum()) - 1) < 1e-6, tag
            widths[tag] = m.gru.fwd[0].shape[1]
        assert widths["M1"] == widths["M3"] < widths["M2"] == widths["full"]


def _cli(*args, cwd):
    return subprocess.run([sys.executable, "-m", "mtga.cli", *args], cwd=cwd, capture_output=True)


def test_criterion_09_determinism(tmp_path):
    with criterion(9, "subcommands byte-identical across runs and thread counts"):
        def run(*args):
            out = _cli(*args, cwd=tmp_path)
            assert out.returncode == 0, out.stderr.decode()
            return out.stdout

        for tag in ("a", "b"):
            run("gen", "--class", "1", "--duration-ms", "300", "--seed", "42", "--out", f"s_{tag}.evs")
        assert (tmp_path / "s_a.evs").read_bytes() == (tmp_path / "s_b.evs").read_bytes()
        for threads in ("1", "2", "4"):
            for tag in ("a", "b"):
                run("frames", "--in", "s_a.evs", "--out", f"f_{threads}{tag}.efr", "--threads", threads)
                run("graphs", "--in", "s_a.evs", "--out", f"g_{threads}{tag}.json", "--threads", threads)
        for kind, ext in (("f", "efr"), ("g", "json")):
            blobs = {(tmp_path / f"{kind}_{t}{r}.{ext}").read_bytes() for t in "124" for r in "ab"}
            assert len(blobs) == 1, f"{ext} outputs differ"
        for tag in ("a", "b"):
            run("train-toy", "--steps", "3", "--per-class", "2", "--batch-size", "4", "--seed", "7",
                "--out", f"m_{tag}.mtg")
        assert (tmp_path / "m_a.mtg").read_bytes() == (tmp_path / "m_b.mtg").read_bytes()
        run("gen", "--class", "0", "--duration-ms", "200", "--seed", "3", "--width", "32", "--height", "32",
            "--out", "toy.evs")
        run("frames", "--in", "toy.evs", "--out", "toy.efr", "--bins", "8")
        run("graphs", "--in", "toy.evs", "--out", "toy.json", "--bins", "8", "--top-k", "16", "--points", "8")
        for tag in ("a", "b"):
            run("forward", "--model", "m_a.mtg", "--frames", "toy.efr", "--graphs", "toy.json", "--out", f"p_{tag}.csv")
        assert (tmp_path / "p_a.csv").read_bytes() == (tmp_path / "p_b.csv").read_bytes()
        (tmp_path / "man.csv").write_text("toy.evs,0,1\ns_a.evs,1,2\n")
        evals = {run("eval", "--model", "m_a.mtg", "--manifest", "man.csv", "--threads", t) for t in ("1", "3")}
        assert len(evals) == 1
        benches = [run("bench", "--sizes", "0,1000,20000", "--repeats", "1", "--seed", "9") for _ in range(2)]
        counts = [[line.split(b",")[0] for line in b.splitlines()[1:]] for b in benches]
        assert counts[0] == counts[1] and counts[0][0] == b"0"


def test_criterion_10_bench_scaling():
    with criterion(10, "bench: 1e6 events through both representations, near-linear scaling"):
        rows = run_bench([100_000, 1_000_000], seed=0, repeats=5)
        assert rows[1]["events"] >= 900_000
        ratio = scaling_ratio(rows)
        per_event = [1e6 * (r["frames_ms"] + r["graphs_ms"]) / r["events"] for r in rows]
        print(f"    per-event cost {per_event[0]:.1f} ns vs {per_event[1]:.1f} ns, ratio {ratio:.3f}")
        assert ratio < 2.0, f"ratio {ratio:.3f}"
