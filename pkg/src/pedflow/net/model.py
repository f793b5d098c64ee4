"""Forward pass, loss, and hand-derived gradients.

Five per-step streams (node offsets, occupancy, bird view, edge id,
signal) each run through their own window encoder; a sixth encoder
reads the collapsed edge history. Their final states, together with the
goal embedding, fuse linearly into the decoder's constant input. The
decoder unrolls a fixed number of steps; a single attention head,
queried from the node-offset encoder, summarizes the decoder states,
and two linear heads read displacement and next-edge logits off the
last decoder state concatenated with the attention context.

The embedding stage is separable (embed_step / predict_embedded) so a
closed-loop caller can embed each new record once and reuse it across
the sliding windows of later steps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import (
    lstm_backward,
    lstm_forward,
    scaled_attention,
    scaled_attention_backward,
    softmax,
)
from ..errors import ShapeMismatch
from .params import STREAMS, ModelParams


@dataclass
class Prediction:
    delta_p: np.ndarray     # (B, 2)
    edge_logits: np.ndarray  # (B, n_edges)
    edge_probs: np.ndarray
    attn: np.ndarray        # (B, dec_steps)

    @property
    def edge_argmax(self) -> np.ndarray:
        return self.edge_logits.argmax(axis=1)


def _require_batch(params, batch):
    need = ("rel", "occ", "bird", "edge", "sig", "hist", "goal")
    for key in need:
        if key not in batch:
            raise ValueError(f"batch missing {key!r}")
    if batch["goal"].shape[0] == 0:
        raise ValueError("empty batch")
    cfg = params.config
    for s in ("rel", "occ", "bird"):
        got = batch[s].shape[-1]
        want = cfg.stream_width(s)
        if got != want:
            raise ShapeMismatch(f"{s}: input width {got}, model expects {want}")
    if batch["rel"].shape[1] != cfg.window:
        raise ShapeMismatch(f"window length {batch['rel'].shape[1]}, "
                            f"model expects {cfg.window}")
    if batch["hist"].shape[1] != cfg.history_len:
        raise ShapeMismatch(f"edge history length {batch['hist'].shape[1]}, "
                            f"model expects {cfg.history_len}")


def embed_step(params: ModelParams, rel, occ, bird, edge_idx, sig) -> dict:
    """Embed one record for n agents: inputs (n, width) -> (n, embed)."""
    p = params.tensors
    return {
        "rel": rel @ p["emb_rel_W"] + p["emb_rel_b"],
        "occ": occ @ p["emb_occ_W"] + p["emb_occ_b"],
        "bird": bird @ p["emb_bird_W"] + p["emb_bird_b"],
        "edge": p["emb_edge_W"][np.asarray(edge_idx, dtype=np.int64)],
        "sig": np.asarray(sig, dtype=np.float64).reshape(-1, 1),
    }


def _embed_windows(params: ModelParams, batch: dict) -> dict:
    p = params.tensors
    bsz, n, _ = batch["rel"].shape
    d = params.config.embed_dim

    def lin(x, w, b):
        width = x.shape[-1]
        return (x.reshape(-1, width) @ w).reshape(bsz, n, d) + b

    return {
        "rel": lin(batch["rel"], p["emb_rel_W"], p["emb_rel_b"]),
        "occ": lin(batch["occ"], p["emb_occ_W"], p["emb_occ_b"]),
        "bird": lin(batch["bird"], p["emb_bird_W"], p["emb_bird_b"]),
        "edge": p["emb_edge_W"][batch["edge"]],
        "sig": batch["sig"][..., None],
    }


def _forward_core(params: ModelParams, streams: dict, hist, goal, need_cache: bool):
    p = params.tensors
    cfg = params.config
    enc_h = {}
    enc_caches = {}
    for s in STREAMS:
        h_seq, cache = lstm_forward(streams[s], p[f"enc_{s}_Wx"],
                                    p[f"enc_{s}_Wh"], p[f"enc_{s}_b"])
        enc_h[s] = h_seq[:, -1]
        if need_cache:
            enc_caches[s] = cache

    hist = np.asarray(hist, dtype=np.int64)
    goal = np.asarray(goal, dtype=np.int64)
    hist_e = p["emb_edge_W"][hist]
    gh_seq, glob_cache = lstm_forward(hist_e, p["enc_glob_Wx"],
                                      p["enc_glob_Wh"], p["enc_glob_b"])
    h_glob = gh_seq[:, -1]
    goal_e = p["emb_goal_W"][goal]

    fuse_in = np.concatenate([goal_e, enc_h["rel"], enc_h["occ"], enc_h["bird"],
                              enc_h["edge"], enc_h["sig"], h_glob], axis=1)
    z = fuse_in @ p["fuse_W"] + p["fuse_b"]

    z_rep = np.broadcast_to(z[:, None, :], (z.shape[0], cfg.dec_steps, z.shape[1]))
    z_rep = np.ascontiguousarray(z_rep)
    d_seq, dec_cache = lstm_forward(z_rep, p["dec_Wx"], p["dec_Wh"], p["dec_b"])

    q = enc_h["rel"] @ p["attn_Wq"] + p["attn_bq"]
    k = d_seq @ p["attn_Wk"] + p["attn_bk"]
    v = d_seq @ p["attn_Wv"] + p["attn_bv"]
    ctx, alpha, attn_cache = scaled_attention(q, k, v)

    out = np.concatenate([d_seq[:, -1], ctx], axis=1)
    dp = out @ p["head_dp_W"] + p["head_dp_b"]
    logits = out @ p["head_edge_W"] + p["head_edge_b"]

    pred = Prediction(delta_p=dp, edge_logits=logits,
                      edge_probs=softmax(logits, axis=1), attn=alpha)
    if not need_cache:
        return pred, None
    cache = dict(streams=streams, enc_caches=enc_caches, enc_h=enc_h,
                 hist=hist, hist_e=hist_e, glob_cache=glob_cache, goal=goal,
                 fuse_in=fuse_in, z_rep=z_rep, dec_cache=dec_cache,
                 d_seq=d_seq, q=q, attn_cache=attn_cache, out=out)
    return pred, cache


def predict_embedded(params: ModelParams, streams: dict, hist, goal) -> Prediction:
    """Closed-loop path: streams are already embedded (B, N, embed)."""
    pred, _ = _forward_core(params, streams, hist, goal, need_cache=False)
    return pred


def forward(params: ModelParams, batch: dict, need_cache: bool = False):
    """Training path: embeds the raw batch, then runs the shared core."""
    _require_batch(params, batch)
    streams = _embed_windows(params, batch)
    pred, cache = _forward_core(params, streams, batch["hist"], batch["goal"],
                                need_cache)
    if need_cache:
        cache["batch"] = batch
    return pred, cache


def predict(params: ModelParams, batch: dict) -> Prediction:
    pred, _ = forward(params, batch, need_cache=False)
    return pred


def _backward_core(params: ModelParams, cache: dict, ddp, dlogits, grads: dict) -> dict:
    """Shared backward: from head gradients to per-stream input gradients.
    Returns dstreams dict aligned with cache['streams']."""
    p = params.tensors
    hd = params.config.dec_hidden
    out = cache["out"]

    grads["head_dp_W"] += out.T @ ddp
    grads["head_dp_b"] += ddp.sum(axis=0)
    grads["head_edge_W"] += out.T @ dlogits
    grads["head_edge_b"] += dlogits.sum(axis=0)
    dout = ddp @ p["head_dp_W"].T + dlogits @ p["head_edge_W"].T

    dh_last = dout[:, :hd]
    dctx = dout[:, hd:]
    dq, dk, dv = scaled_attention_backward(dctx, None, cache["attn_cache"])

    d_seq = cache["d_seq"]
    flat = d_seq.reshape(-1, hd)
    grads["attn_Wk"] += flat.T @ dk.reshape(-1, dk.shape[-1])
    grads["attn_bk"] += dk.sum(axis=(0, 1))
    grads["attn_Wv"] += flat.T @ dv.reshape(-1, dv.shape[-1])
    grads["attn_bv"] += dv.sum(axis=(0, 1))
    dd_seq = dk @ p["attn_Wk"].T + dv @ p["attn_Wv"].T
    dd_seq[:, -1] += dh_last

    enc_h_rel = cache["enc_h"]["rel"]
    grads["attn_Wq"] += enc_h_rel.T @ dq
    grads["attn_bq"] += dq.sum(axis=0)
    dh_rel_extra = dq @ p["attn_Wq"].T

    dz_rep = lstm_backward(dd_seq, cache["dec_cache"], grads, "dec")
    dz = dz_rep.sum(axis=1)

    fuse_in = cache["fuse_in"]
    grads["fuse_W"] += fuse_in.T @ dz
    grads["fuse_b"] += dz.sum(axis=0)
    dfuse_in = dz @ p["fuse_W"].T

    d = params.config.embed_dim
    h = params.config.enc_hidden
    dgoal_e = dfuse_in[:, :d]
    denc = {}
    offset = d
    for s in ("rel", "occ", "bird", "edge", "sig"):
        denc[s] = dfuse_in[:, offset:offset + h].copy()
        offset += h
    dh_glob = dfuse_in[:, offset:]
    denc["rel"] += dh_rel_extra

    np.add.at(grads["emb_goal_W"], cache["goal"], dgoal_e)

    gh_steps = cache["glob_cache"][0].shape[1]
    dgh_seq = np.zeros((dh_glob.shape[0], gh_steps, h))
    dgh_seq[:, -1] = dh_glob
    dhist_e = lstm_backward(dgh_seq, cache["glob_cache"], grads, "enc_glob")
    np.add.at(grads["emb_edge_W"], cache["hist"], dhist_e)

    dstreams = {}
    for s in STREAMS:
        x = cache["streams"][s]
        dh_seq = np.zeros((x.shape[0], x.shape[1], h))
        dh_seq[:, -1] = denc[s]
        dstreams[s] = lstm_backward(dh_seq, cache["enc_caches"][s], grads, f"enc_{s}")
    return dstreams


def _backward_embeddings(params: ModelParams, batch: dict, dstreams: dict,
                         grads: dict) -> None:
    d = params.config.embed_dim
    for s, key_w, key_b in (("rel", "emb_rel_W", "emb_rel_b"),
                            ("occ", "emb_occ_W", "emb_occ_b"),
                            ("bird", "emb_bird_W", "emb_bird_b")):
        x = batch[s]
        dx = dstreams[s]
        width = x.shape[-1]
        grads[key_w] += x.reshape(-1, width).T @ dx.reshape(-1, d)
        grads[key_b] += dx.sum(axis=(0, 1))
    np.add.at(grads["emb_edge_W"], batch["edge"], dstreams["edge"])
    # signal stream has no embedding parameters


def loss_and_grads(params: ModelParams, batch: dict, lam_pos: float = 1.0,
                   lam_edge: float = 1.0):
    """Combined loss (weighted displacement MSE + next-edge NLL), its
    gradients for every tensor, and scalar metrics."""
    pred, cache = forward(params, batch, need_cache=True)
    bsz = pred.delta_p.shape[0]
    target_dp = batch["target_dp"]
    target_edge = np.asarray(batch["target_edge"], dtype=np.int64)

    err = pred.delta_p - target_dp
    pos_mse = float((err ** 2).mean())

    logits = pred.edge_logits
    m = logits.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(logits - m).sum(axis=1))
    logp = logits[np.arange(bsz), target_edge] - lse
    edge_nll = float(-logp.mean())

    loss = lam_pos * pos_mse + lam_edge * edge_nll

    ddp = lam_pos * 2.0 * err / err.size
    dlogits = pred.edge_probs.copy()
    dlogits[np.arange(bsz), target_edge] -= 1.0
    dlogits *= lam_edge / bsz

    grads = params.zero_grads()
    dstreams = _backward_core(params, cache, ddp, dlogits, grads)
    _backward_embeddings(params, batch, dstreams, grads)

    metrics = {"pos_mse": pos_mse, "edge_nll": edge_nll, "n": bsz}
    return loss, grads, metrics
