"""Helpers shared by the test-suite: random streams and finite-difference checks."""
from __future__ import annotations

import time
from contextlib import contextmanager

import numpy as np

from . import autodiff as ad
from .events import EventStream, SensorGeometry


def random_stream(rng: np.random.Generator, n: int | None = None, max_events: int = 10_000,
                  max_side: int = 128, max_t: int | None = None) -> EventStream:
    """Random valid stream; small timestamp ranges make ties and shared voxels common."""
    geometry = SensorGeometry(int(rng.integers(1, max_side + 1)), int(rng.integers(1, max_side + 1)))
    if n is None:
        n = int(rng.integers(0, max_events + 1))
    if max_t is None:
        max_t = int(rng.choice([1, 50, 10_000, 2_000_000]))
    t = np.sort(rng.integers(0, max_t + 1, n)) + int(rng.integers(0, 1_000_000))
    x = rng.integers(0, geometry.width, n)
    y = rng.integers(0, geometry.height, n)
    p = rng.choice(np.array([-1, 1]), n)
    return EventStream(geometry, t, x, y, p)


def numeric_gradient(loss_fn, tensor: ad.Tensor, eps: float = 1e-4) -> np.ndarray:
    grad = np.zeros_like(tensor.data, dtype=np.float64)
    flat = tensor.data.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = loss_fn()
        flat[i] = orig - eps
        down = loss_fn()
        flat[i] = orig
        grad.reshape(-1)[i] = (up - down) / (2 * eps)
    return grad


def relative_error(analytic, numeric, floor: float = 1e-6) -> float:
    """||a - n|| / max(||a||, ||n||, floor), with 2-norms over all entries."""
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)
    if a.size == 0:
        return 0.0
    scale = max(np.linalg.norm(a), np.linalg.norm(n), floor)
    return float(np.linalg.norm(a - n) / scale)


def gradient_errors(fn, inputs, eps: float = 1e-4, seed: int = 0) -> dict:
    """Norm-wise relative error between analytic and numeric gradients, per input.

    ``fn`` maps the inputs to a Tensor; a fixed random projection turns it
    into a scalar.  Inputs must be float64 tensors with requires_grad set.
    """
    probe = fn(*inputs)
    weights = np.random.default_rng(seed).normal(size=probe.shape)

    def scalar() -> float:
        with ad.no_grad():
            return float(np.sum(fn(*inputs).data * weights))

    for t in inputs:
        t.grad = None
    out = fn(*inputs)
    ad.sum(out * ad.Tensor(weights)).backward()
    errors = {}
    for k, t in enumerate(inputs):
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        errors[t.name or k] = relative_error(analytic, numeric_gradient(scalar, t, eps))
    return errors


def module_gradient_errors(module: ad.Module, fn, eps: float = 1e-4, seed: int = 0,
                           max_entries: int | None = None) -> dict:
    """Norm-wise relative gradient errors for every parameter of ``module`` under ``fn()``.

    With ``max_entries`` only that many randomly chosen entries per parameter
    are perturbed, which keeps checks on bigger blocks affordable.
    """
    params = dict(module.named_parameters())
    probe = fn()
    weights = np.random.default_rng(seed).normal(size=probe.shape)

    def scalar() -> float:
        with ad.no_grad():
            return float(np.sum(fn().data * weights))

    module.zero_grad()
    ad.sum(fn() * ad.Tensor(weights)).backward()
    rng = np.random.default_rng(seed + 1)
    errors = {}
    for name, p in params.items():
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, max_entries, replace=False)
        numeric = np.zeros(len(idx))
        for r, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + eps
            up = scalar()
            flat[i] = orig - eps
            down = scalar()
            flat[i] = orig
            numeric[r] = (up - down) / (2 * eps)
        errors[name] = relative_error(analytic.reshape(-1)[idx], numeric)
    return errors


def graph_list_mismatch(fast, ref, atol: float = 1e-9) -> str | None:
    """None when both lists hold the same nodes, edges and weights; else a description."""
    if len(fast) != len(ref):
        return f"{len(fast)} graphs vs {len(ref)}"
    for i, (a, b) in enumerate(zip(fast, ref)):
        if a.nodes != b.nodes:
            return f"frame {i}: nodes differ"
        ea, eb = a.edge_dict(), b.edge_dict()
        if ea.keys() != eb.keys():
            return f"frame {i}: edge sets differ"
        bad = [e for e in ea if abs(ea[e] - eb[e]) > atol]
        if bad:
            return f"frame {i}: weight of edge {bad[0]} differs"
    return None


# --------------------------------------------------------------------------
# acceptance reporting

ACCEPTANCE_RESULTS: list = []


@contextmanager
def criterion(number: int, title: str):
    """Record PASS/FAIL (with wall time) for one acceptance criterion; re-raises failures."""
    start = time.perf_counter()
    try:
        yield
    except BaseException as exc:
        line = f"criterion {number:2d} FAIL  {title} ({time.perf_counter() - start:.1f}s): {exc!s:.200}"
        ACCEPTANCE_RESULTS.append(line)
        print(line)
        raise
    line = f"criterion {number:2d} PASS  {title} ({time.perf_counter() - start:.1f}s)"
    ACCEPTANCE_RESULTS.append(line)
    print(line)
