"""Numeric verification of the analytic gradients.

Central differences over every element of every tensor, compared with
the backward pass at two tolerances: a mixed criterion
|a - n| / max(1, |a|, |n|) for all elements, and a strict relative one
for elements large enough that cancellation noise cannot dominate.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .model import forward, loss_and_grads
from .params import ModelConfig, ModelParams

MIXED_TOL = 1e-5
STRICT_TOL = 1e-5
STRICT_FLOOR = 1e-3


def tiny_config(n_nodes: int = 3, n_edges: int = 4) -> ModelConfig:
    """Reduced dimensions for exhaustive checking; the bird input keeps
    its full 50x50 raster so the heaviest embedding is exercised as-is."""
    return ModelConfig(n_nodes=n_nodes, n_edges=n_edges, embed_dim=6,
                       enc_hidden=5, dec_hidden=7, attn_dim=4, dec_steps=2,
                       window=3, history_len=2, n_bins=8, bird_pixels=2500)


def random_batch(cfg: ModelConfig, batch_size: int = 2, seed: int = 0) -> dict:
    gen = np.random.default_rng(seed)
    n = cfg.window
    return {
        "rel": gen.normal(0.0, 3.0, (batch_size, n, 2 * cfg.n_nodes)),
        "occ": gen.poisson(0.7, (batch_size, n, cfg.n_bins)).astype(np.float64),
        "bird": gen.uniform(0.0, 1.0, (batch_size, n, cfg.bird_pixels)),
        "edge": gen.integers(0, cfg.n_edges, (batch_size, n)),
        "sig": gen.uniform(0.0, 1.0, (batch_size, n)),
        "hist": gen.integers(0, cfg.n_edges + 1, (batch_size, cfg.history_len)),
        "goal": gen.integers(0, cfg.n_nodes, batch_size),
        "target_dp": gen.normal(0.0, 0.25, (batch_size, 2)),
        "target_edge": gen.integers(0, cfg.n_edges, batch_size),
    }


def _loss_only(params: ModelParams, batch: dict, lam_pos: float, lam_edge: float) -> float:
    pred, _ = forward(params, batch, need_cache=False)
    err = pred.delta_p - batch["target_dp"]
    pos = float((err ** 2).mean())
    logits = pred.edge_logits
    bsz = logits.shape[0]
    m = logits.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(logits - m).sum(axis=1))
    tgt = np.asarray(batch["target_edge"], dtype=np.int64)
    nll = float(-(logits[np.arange(bsz), tgt] - lse).mean())
    return lam_pos * pos + lam_edge * nll


@dataclass
class TensorReport:
    name: str
    n_elements: int
    max_abs_diff: float
    max_mixed: float
    max_strict: float

    @property
    def passed(self) -> bool:
        return self.max_mixed < MIXED_TOL and self.max_strict < STRICT_TOL


@dataclass
class GradCheckReport:
    loss: float
    tensors: list = field(default_factory=list)
    elapsed: float = 0.0

    @property
    def passed(self) -> bool:
        return all(t.passed for t in self.tensors)

    @property
    def worst_mixed(self) -> float:
        return max((t.max_mixed for t in self.tensors), default=0.0)

    def summary(self) -> str:
        lines = [f"loss {self.loss:.6f}, {len(self.tensors)} tensors, "
                 f"{self.elapsed:.1f}s, worst mixed rel {self.worst_mixed:.2e}"]
        for t in sorted(self.tensors, key=lambda r: -r.max_mixed):
            mark = "ok " if t.passed else "BAD"
            lines.append(f"  {mark} {t.name:14s} n={t.n_elements:6d} "
                         f"mixed={t.max_mixed:.2e} strict={t.max_strict:.2e}")
        return "\n".join(lines)


def check_gradients(params: ModelParams, batch: dict, eps: float = 1e-6,
                    lam_pos: float = 1.0, lam_edge: float = 1.0,
                    tensors=None) -> GradCheckReport:
    """Compare analytic and central-difference gradients element by
    element. tensors optionally restricts to a subset of names."""
    start = time.perf_counter()
    loss, grads, _ = loss_and_grads(params, batch, lam_pos, lam_edge)
    report = GradCheckReport(loss=loss)
    names = tensors if tensors is not None else list(params.tensors)
    for name in names:
        arr = params.tensors[name]
        analytic = grads[name]
        max_abs = 0.0
        max_mixed = 0.0
        max_strict = 0.0
        flat = arr.reshape(-1)
        aflat = analytic.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            up = _loss_only(params, batch, lam_pos, lam_edge)
            flat[k] = orig - eps
            dn = _loss_only(params, batch, lam_pos, lam_edge)
            flat[k] = orig
            numeric = (up - dn) / (2.0 * eps)
            a = aflat[k]
            diff = abs(a - numeric)
            scale = max(abs(a), abs(numeric))
            max_abs = max(max_abs, diff)
            max_mixed = max(max_mixed, diff / max(1.0, scale))
            if scale > STRICT_FLOOR:
                max_strict = max(max_strict, diff / scale)
        report.tensors.append(TensorReport(name=name, n_elements=flat.size,
                                           max_abs_diff=max_abs,
                                           max_mixed=max_mixed,
                                           max_strict=max_strict))
    report.elapsed = time.perf_counter() - start
    return report
