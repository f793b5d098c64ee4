"""Parameter container: shapes, initialization, checkpoint files."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .. import CHECKPOINT_VERSION
from ..errors import CheckpointError

# window streams encoded per step: name -> input width source
STREAMS = ("rel", "occ", "bird", "edge", "sig")


@dataclass(frozen=True)
class ModelConfig:
    n_nodes: int
    n_edges: int
    embed_dim: int = 32
    enc_hidden: int = 64
    dec_hidden: int = 128
    attn_dim: int = 64
    dec_steps: int = 4
    window: int = 20
    history_len: int = 4
    n_bins: int = 32
    bird_pixels: int = 2500

    def __post_init__(self):
        if min(self.n_nodes, self.n_edges, self.embed_dim, self.enc_hidden,
               self.dec_hidden, self.attn_dim, self.dec_steps, self.window,
               self.history_len, self.n_bins, self.bird_pixels) < 1:
            raise ValueError("all model dimensions must be positive")

    @classmethod
    def from_scenario(cls, scenario, features=None, **overrides) -> "ModelConfig":
        from ..features import DEFAULT_FEATURES
        f = features or DEFAULT_FEATURES
        base = cls(
            n_nodes=scenario.graph.n_nodes,
            n_edges=scenario.graph.n_edges,
            window=f.window,
            history_len=f.history_len,
            n_bins=f.n_bins,
            bird_pixels=f.bird_size ** 2,
        )
        return replace(base, **overrides) if overrides else base

    @property
    def pad_edge(self) -> int:
        """Embedding row used for front-padding edge histories."""
        return self.n_edges

    def stream_width(self, stream: str) -> int:
        if stream == "rel":
            return 2 * self.n_nodes
        if stream == "occ":
            return self.n_bins
        if stream == "bird":
            return self.bird_pixels
        if stream == "edge":
            return self.embed_dim  # after lookup
        if stream == "sig":
            return 1
        raise KeyError(stream)


def param_specs(cfg: ModelConfig) -> list:
    """Ordered (name, shape, kind) for every tensor. The order is part of
    the seeding contract: do not reorder."""
    d, h, hd, a = cfg.embed_dim, cfg.enc_hidden, cfg.dec_hidden, cfg.attn_dim
    specs = [
        ("emb_rel_W", (2 * cfg.n_nodes, d), "weight"),
        ("emb_rel_b", (d,), "bias"),
        ("emb_occ_W", (cfg.n_bins, d), "weight"),
        ("emb_occ_b", (d,), "bias"),
        ("emb_bird_W", (cfg.bird_pixels, d), "weight"),
        ("emb_bird_b", (d,), "bias"),
        ("emb_edge_W", (cfg.n_edges + 1, d), "lookup"),
        ("emb_goal_W", (cfg.n_nodes, d), "lookup"),
    ]
    enc_in = {"rel": d, "occ": d, "bird": d, "edge": d, "sig": 1}
    for s in STREAMS:
        specs += [
            (f"enc_{s}_Wx", (enc_in[s], 4 * h), "weight"),
            (f"enc_{s}_Wh", (h, 4 * h), "weight"),
            (f"enc_{s}_b", (4 * h,), "lstm_bias"),
        ]
    specs += [
        ("enc_glob_Wx", (d, 4 * h), "weight"),
        ("enc_glob_Wh", (h, 4 * h), "weight"),
        ("enc_glob_b", (4 * h,), "lstm_bias"),
        ("fuse_W", (d + 6 * h, hd), "weight"),
        ("fuse_b", (hd,), "bias"),
        ("dec_Wx", (hd, 4 * hd), "weight"),
        ("dec_Wh", (hd, 4 * hd), "weight"),
        ("dec_b", (4 * hd,), "lstm_bias"),
        ("attn_Wq", (h, a), "weight"),
        ("attn_bq", (a,), "bias"),
        ("attn_Wk", (hd, a), "weight"),
        ("attn_bk", (a,), "bias"),
        ("attn_Wv", (hd, a), "weight"),
        ("attn_bv", (a,), "bias"),
        ("head_dp_W", (hd + a, 2), "weight"),
        ("head_dp_b", (2,), "bias"),
        ("head_edge_W", (hd + a, cfg.n_edges), "weight"),
        ("head_edge_b", (cfg.n_edges,), "bias"),
    ]
    return specs


class ModelParams:
    """config plus a name -> float64 array mapping in spec order."""

    def __init__(self, config: ModelConfig, tensors: dict):
        self.config = config
        specs = param_specs(config)
        names = [n for n, _, _ in specs]
        missing = set(names) - set(tensors)
        extra = set(tensors) - set(names)
        if missing or extra:
            raise CheckpointError(f"parameter names mismatch: missing={sorted(missing)} "
                                  f"extra={sorted(extra)}")
        self.tensors = {}
        for name, shape, _ in specs:
            arr = np.ascontiguousarray(tensors[name], dtype=np.float64)
            if arr.shape != shape:
                raise CheckpointError(f"{name}: expected shape {shape}, got {arr.shape}")
            self.tensors[name] = arr

    @classmethod
    def init(cls, config: ModelConfig, seed: int) -> "ModelParams":
        """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)); biases zero except the
        forget-gate slice of LSTM biases, which starts at 1."""
        gen = np.random.default_rng(seed)
        tensors = {}
        for name, shape, kind in param_specs(config):
            if kind == "weight":
                bound = 1.0 / np.sqrt(shape[0])
                tensors[name] = gen.uniform(-bound, bound, shape)
            elif kind == "lookup":
                bound = 1.0 / np.sqrt(shape[1])
                tensors[name] = gen.uniform(-bound, bound, shape)
            elif kind == "lstm_bias":
                b = np.zeros(shape)
                hh = shape[0] // 4
                b[hh:2 * hh] = 1.0
                tensors[name] = b
            else:
                tensors[name] = np.zeros(shape)
        return cls(config, tensors)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def items(self):
        return self.tensors.items()

    @property
    def n_params(self) -> int:
        return sum(a.size for a in self.tensors.values())

    def zero_grads(self) -> dict:
        return {k: np.zeros_like(v) for k, v in self.tensors.items()}

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def save(self, path) -> None:
        path = Path(path)
        meta = {"checkpoint_version": CHECKPOINT_VERSION,
                "config": asdict(self.config)}
        with open(path, "wb") as fh:  # keep the exact filename, no .npz magic
            np.savez(fh, __meta__=np.frombuffer(
                json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8),
                **self.tensors)

    @classmethod
    def load(cls, path) -> "ModelParams":
        path = Path(path)
        if not path.exists():
            raise CheckpointError(f"checkpoint not found: {path}")
        try:
            with np.load(path) as data:
                arrays = {k: data[k] for k in data.files}
        except (OSError, ValueError) as exc:
            raise CheckpointError(f"checkpoint unreadable: {exc}") from exc
        if "__meta__" not in arrays:
            raise CheckpointError(f"{path}: not a model checkpoint (no metadata)")
        meta = json.loads(arrays.pop("__meta__").tobytes().decode())
        version = meta.get("checkpoint_version")
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(
                f"{path}: checkpoint version {version} not supported "
                f"(this build reads {CHECKPOINT_VERSION})")
        config = ModelConfig(**meta["config"])
        return cls(config, arrays)
