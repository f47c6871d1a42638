"""Geometry-topology interaction network.

Maps a noisy mixed state ``S_t``, the boundary graph and the step ``t`` to
a geometry noise estimate and clean-label distributions for every node
slot and candidate edge. Slots carry no index embedding, so the network
body is equivariant to slot permutations.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
from collections import OrderedDict
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .boundary import BoundaryGraph
from .diffusion import NoiseSchedule, one_hot
from .errors import ConfigError, FormatError
from .pore_graph import ACTIVE, PoreGraph, coord_scale, edge_index, pair_lookup

MASKED = -1e9


@dataclass(frozen=True)
class AblationFlags:
    use_boundary_prior: bool = True
    use_discrete_topology: bool = True
    use_gti_coupling: bool = True
    use_boundary_cross_attention: bool = True

    @classmethod
    def ablation(cls, name: str | None) -> "AblationFlags":
        """Full model for ``None``; ``m1``..``m4`` switch off one component each."""
        if name is None or name == "full":
            return cls()
        fields = {
            "m1": "use_boundary_prior",
            "m2": "use_discrete_topology",
            "m3": "use_gti_coupling",
            "m4": "use_boundary_cross_attention",
        }
        if name.lower() not in fields:
            raise ConfigError(f"unknown ablation {name!r}")
        return replace(cls(), **{fields[name.lower()]: False})

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class DenoiserConfig:
    d: int = 64
    n_blocks: int = 3
    n_heads: int = 2
    n_freq: int = 64
    bias_hidden: int = 16
    heuristic_r_min: float = 1.0  # voxels
    seed: int = 0

    def __post_init__(self):
        if self.d % self.n_heads:
            raise ConfigError("d must be divisible by n_heads")

    def to_dict(self) -> dict:
        return asdict(self)


def relative_geometry(bi, bj) -> np.ndarray:
    """``[x_i - x_j, y_i - y_j, z_i - z_j, r_i - r_j, |p_i - p_j|]``."""
    bi, bj = np.asarray(bi, dtype=np.float64), np.asarray(bj, dtype=np.float64)
    diff = bi - bj
    return np.concatenate([diff, np.linalg.norm(diff[..., :3], axis=-1, keepdims=True)], axis=-1)


def time_features(t: float, n_freq: int = 64) -> np.ndarray:
    """Sinusoidal features ``[sin(t w_k), cos(t w_k)]`` with geometric frequencies."""
    k = np.arange(n_freq)
    w = np.exp(-math.log(10000.0) * k / n_freq)
    return np.concatenate([np.sin(t * w), np.cos(t * w)])


# --- parameters --------------------------------------------------------------

def _param_shapes(cfg: DenoiserConfig) -> list[tuple[str, tuple, str]]:
    d, h, hb = cfg.d, cfg.n_heads, cfg.bias_hidden
    s = []

    def lin(name, fan_in, fan_out, init="normal", bias="zeros"):
        s.append((f"{name}.W", (fan_in, fan_out), init))
        if bias is not None:
            s.append((f"{name}.b", (fan_out,), bias))

    lin("emb.b", 4, d)
    lin("emb.c", 2, d)
    lin("emb.e", 2, d)
    lin("emb.delta", 5, d)
    lin("emb.t1", 2 * cfg.n_freq, d)
    lin("emb.t2", d, d)
    lin("emb.m", 2, d)
    lin("emb.me", 3, d)
    lin("emb.node", 4 * d, d)
    lin("emb.edge", 4 * d, d)
    lin("bd.tok1", 5, d)
    lin("bd.tok2", d, d)
    s.append(("bd.null", (1, d), "normal"))
    for l in range(cfg.n_blocks):
        p = f"blk{l}"
        lin(f"{p}.node.q", d, d, bias=None)
        lin(f"{p}.node.k", d, d, bias=None)
        lin(f"{p}.node.vh", d, d)
        lin(f"{p}.node.vg", d, d, bias=None)
        lin(f"{p}.node.vd", 5, d, bias=None)
        lin(f"{p}.node.v", d, d, bias=None)
        lin(f"{p}.node.o", d, d)
        lin(f"{p}.eta_h1", 5, hb)
        lin(f"{p}.eta_h2", hb, h)
        lin(f"{p}.edge.q", d, d, bias=None)
        lin(f"{p}.edge.kn", d, d, bias=None)
        lin(f"{p}.edge.kg", d, d, bias=None)
        lin(f"{p}.edge.vn", d, d, bias=None)
        lin(f"{p}.edge.vg", d, d, bias=None)
        lin(f"{p}.edge.o", d, d)
        lin(f"{p}.bd.q", d, d, bias=None)
        lin(f"{p}.bd.k", d, d, bias=None)
        lin(f"{p}.bd.v", d, d, bias=None)
        lin(f"{p}.bd.o", d, d)
        lin(f"{p}.eta_rel1", 3, hb)
        lin(f"{p}.eta_rel2", hb, h)
        lin(f"{p}.eta_side", 1, h)
        s.append((f"{p}.ln_h.scale", (d,), "ones"))
        s.append((f"{p}.ln_h.shift", (d,), "zeros"))
        s.append((f"{p}.ln_e.scale", (d,), "ones"))
        s.append((f"{p}.ln_e.shift", (d,), "zeros"))
        lin(f"{p}.film_h", 2 * d, 2 * d, init="zeros", bias="film")
        lin(f"{p}.film_e", 2 * d, 2 * d, init="zeros", bias="film")
    lin("out.eps", d, 4)
    lin("out.c", d, 2)
    lin("out.e1", 2 * d, d)
    lin("out.e2", d, 2)
    s.append(("dec.residual", (4, 4, 4), "zeros"))
    return s


class DenoiserParams:
    """Ordered collection of named trainable tensors."""

    def __init__(self, tensors: "OrderedDict[str, ad.Parameter]"):
        self.tensors = tensors

    @classmethod
    def init(cls, cfg: DenoiserConfig, seed: int | None = None) -> "DenoiserParams":
        rng = np.random.default_rng(cfg.seed if seed is None else seed)
        out = OrderedDict()
        for name, shape, kind in _param_shapes(cfg):
            if kind == "normal":
                fan_in = shape[0]
                data = rng.standard_normal(shape) / math.sqrt(fan_in)
            elif kind == "zeros":
                data = np.zeros(shape)
            elif kind == "ones":
                data = np.ones(shape)
            elif kind == "film":
                half = shape[0] // 2
                data = np.concatenate([np.ones(half), np.zeros(half)])
            else:
                raise ValueError(kind)
            out[name] = ad.Parameter(data, name=name)
        return cls(out)

    def __getitem__(self, name: str) -> ad.Parameter:
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors.values())

    def names(self) -> list[str]:
        return list(self.tensors)

    def groups(self) -> dict[str, list[str]]:
        g = OrderedDict()
        for name in self.tensors:
            g.setdefault(name.rsplit(".", 1)[0], []).append(name)
        return g

    def flat(self) -> np.ndarray:
        return np.concatenate([p.data.ravel() for p in self.tensors.values()])

    def copy(self) -> "DenoiserParams":
        return DenoiserParams(OrderedDict((k, ad.Parameter(v.data.copy(), name=k)) for k, v in self.tensors.items()))

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(p.data)) for p in self.tensors.values())

    def digest(self) -> str:
        return hashlib.sha256(self.flat().astype("<f8").tobytes()).hexdigest()[:16]


# --- network -----------------------------------------------------------------

class DenoiserOutput(NamedTuple):
    eps: ad.Tensor  # (n, 4)
    p_c: ad.Tensor  # (n, K_c)
    p_e: ad.Tensor  # (m, K_e)


class _Inputs(NamedTuple):
    n: int
    m: int
    iu: np.ndarray
    ju: np.ndarray
    gather: np.ndarray  # (n*n,) index into edge rows, diagonal -> zero row
    B: np.ndarray
    C: np.ndarray
    E: np.ndarray
    node_flags: np.ndarray
    edge_flags: np.ndarray
    delta_dense: np.ndarray  # (n, n, 5)
    delta_edge: np.ndarray  # (m, 5), unsigned so it does not depend on endpoint order
    attn_mask: np.ndarray  # (n, n) bool
    incidence: np.ndarray  # (n, m) neighbour-mean weights
    tokens: np.ndarray  # (k, 5) boundary token features
    token_pos: np.ndarray  # (k, 3)
    token_side: np.ndarray  # (k, 1)
    temb: np.ndarray


def boundary_tokens(gb: BoundaryGraph | None):
    """Observed boundary nodes and soft edges as translation-free tokens.

    Features are ``(r, bottom, top, soft, rho)``; positions enter only
    through relative biases. Tokens are sorted by feature and position so
    the set ordering never depends on slot indices.
    """
    if gb is None or not gb.mask_C.any():
        return np.zeros((0, 5)), np.zeros((0, 3)), np.zeros((0, 1))
    feats, pos, side = [], [], []
    B = gb.values.B
    for s in np.flatnonzero(gb.mask_C):
        bottom = gb.side[s] == 0
        feats.append([B[s, 3], float(bottom), float(not bottom), 0.0, 0.0])
        pos.append(B[s, :3])
        side.append([B[s, 2]])
    iu, ju = edge_index(gb.n_max)
    for k in np.flatnonzero(gb.mask_E_soft):
        i, j = iu[k], ju[k]
        mid = 0.5 * (B[i, :3] + B[j, :3])
        mid[2] = 0.5
        feats.append([0.5 * (B[i, 3] + B[j, 3]), 0.0, 0.0, 1.0, gb.soft_weight[k]])
        pos.append(mid)
        side.append([0.5])
    feats, pos, side = np.array(feats), np.array(pos), np.array(side)
    order = np.lexsort(np.column_stack([feats, pos]).T[::-1])
    return feats[order], pos[order], side[order]


class Denoiser:
    """``D_theta(S_t, G_B, t) -> (eps_hat, p_C, p_E)``."""

    def __init__(self, params: DenoiserParams, cfg: DenoiserConfig = DenoiserConfig(),
                 flags: AblationFlags = AblationFlags(), schedule: NoiseSchedule | None = None):
        self.params = params
        self.cfg = cfg
        self.flags = flags
        self.schedule = schedule

    @classmethod
    def create(cls, cfg: DenoiserConfig = DenoiserConfig(), flags: AblationFlags = AblationFlags(),
               schedule: NoiseSchedule | None = None) -> "Denoiser":
        return cls(DenoiserParams.init(cfg), cfg, flags, schedule)

    # inputs -----------------------------------------------------------------
    def prepare(self, state: PoreGraph, gb: BoundaryGraph | None, t: int) -> _Inputs:
        n = state.n_max
        iu, ju = edge_index(n)
        m = iu.size
        lookup = pair_lookup(n).copy()
        lookup[lookup < 0] = m
        B = np.asarray(state.B, dtype=np.float64)
        active = state.C == ACTIVE
        use_gb = self.flags.use_boundary_prior and gb is not None
        if use_gb:
            node_flags = np.column_stack([gb.mask_B, gb.mask_C]).astype(np.float64)
            edge_flags = np.column_stack([gb.mask_E_obs, gb.mask_E_soft, gb.soft_weight]).astype(np.float64)
            tokens, token_pos, token_side = boundary_tokens(gb)
        else:
            node_flags = np.zeros((n, 2))
            edge_flags = np.zeros((m, 3))
            tokens, token_pos, token_side = np.zeros((0, 5)), np.zeros((0, 3)), np.zeros((0, 1))
        delta_dense = relative_geometry(B[:, None, :], B[None, :, :])
        attn = active[None, :] & ~np.eye(n, dtype=bool)
        inc = np.zeros((n, m))
        k = np.arange(m)
        inc[iu, k] = active[ju]
        inc[ju, k] = active[iu]
        deg = inc.sum(axis=1, keepdims=True)
        inc = np.divide(inc, deg, out=np.zeros_like(inc), where=deg > 0)
        return _Inputs(
            n, m, iu, ju, lookup.ravel(), B,
            one_hot(state.C, 2), one_hot(state.E, 2), node_flags, edge_flags,
            delta_dense, np.abs(delta_dense[iu, ju]), attn, inc,
            tokens, token_pos, token_side, time_features(float(t), self.cfg.n_freq),
        )

    # layers -----------------------------------------------------------------
    def _lin(self, x, name, bias=True):
        p = self.params
        return ad.linear(x, p[f"{name}.W"], p[f"{name}.b"] if bias else None)

    def _mlp_bias(self, x, prefix):
        return self._lin(ad.gelu(self._lin(x, f"{prefix}1")), f"{prefix}2")

    def embed(self, inp: _Inputs, time_emb: ad.Tensor):
        n, m, d = inp.n, inp.m, self.cfg.d
        tn = ad.expand(ad.reshape(time_emb, (1, d)), (n, d))
        te = ad.expand(ad.reshape(time_emb, (1, d)), (m, d))
        h = ad.concat([
            self._lin(inp.B, "emb.b"), self._lin(inp.C, "emb.c"), tn, self._lin(inp.node_flags, "emb.m"),
        ], axis=1)
        g = ad.concat([
            self._lin(inp.E, "emb.e"), self._lin(inp.delta_edge, "emb.delta"), te, self._lin(inp.edge_flags, "emb.me"),
        ], axis=1)
        return self._lin(h, "emb.node"), self._lin(g, "emb.edge")

    def time_embedding(self, inp: _Inputs) -> ad.Tensor:
        x = ad.Tensor(inp.temb.reshape(1, -1))
        return ad.reshape(self._lin(ad.gelu(self._lin(x, "emb.t1")), "emb.t2"), (self.cfg.d,))

    def _heads(self, x, rows):
        hd = self.cfg.d // self.cfg.n_heads
        return ad.transpose(ad.reshape(x, (rows, self.cfg.n_heads, hd)), (1, 0, 2))  # (H, rows, hd)

    def node_attention(self, H, G, inp: _Inputs, l: int):
        n, d, nh = inp.n, self.cfg.d, self.cfg.n_heads
        hd = d // nh
        p = f"blk{l}.node"
        q = self._heads(self._lin(H, f"{p}.q", False), n)
        k = self._heads(self._lin(H, f"{p}.k", False), n)
        scores = ad.matmul(q, ad.transpose(k, (0, 2, 1))) / math.sqrt(hd)  # (H, n, n)
        eta = self._mlp_bias(ad.Tensor(inp.delta_dense.reshape(n * n, 5)), f"blk{l}.eta_h")
        eta = ad.transpose(ad.reshape(eta, (n, n, nh)), (2, 0, 1))
        mask = inp.attn_mask[None, :, :]
        logits = scores + eta + ad.Tensor(np.where(mask, 0.0, MASKED) * np.ones((nh, 1, 1)))
        attn = ad.softmax(logits, axis=-1) * ad.Tensor(np.broadcast_to(mask, (nh, n, n)).astype(float))
        # values depend on the sender node, the pair feature and relative geometry
        vh = ad.expand(ad.reshape(self._lin(H, f"{p}.vh"), (1, n, d)), (n, n, d))
        g_ext = ad.concat([G, ad.Tensor(np.zeros((1, d)))], axis=0)
        vg = ad.reshape(ad.take(self._lin(g_ext, f"{p}.vg", False), inp.gather, axis=0), (n, n, d))
        vd = ad.reshape(ad.matmul(ad.Tensor(inp.delta_dense.reshape(n * n, 5)), self.params[f"{p}.vd.W"]), (n, n, d))
        v = self._lin(ad.reshape(ad.gelu(vh + vg + vd), (n * n, d)), f"{p}.v", False)
        v = ad.transpose(ad.reshape(v, (n, n, nh, hd)), (2, 0, 1, 3))  # (H, i, j, hd)
        msg = ad.matmul(ad.reshape(attn, (nh, n, 1, n)), v)  # (H, i, 1, hd)
        msg = ad.reshape(ad.transpose(ad.reshape(msg, (nh, n, hd)), (1, 0, 2)), (n, d))
        return self._lin(msg, f"{p}.o")

    def edge_attention(self, H, G, inp: _Inputs, l: int):
        m, d, nh = inp.m, self.cfg.d, self.cfg.n_heads
        hd = d // nh
        p = f"blk{l}.edge"
        q = ad.reshape(self._lin(G, f"{p}.q", False), (m, 1, nh, hd))
        kn = self._lin(H, f"{p}.kn", False)
        vn = self._lin(H, f"{p}.vn", False)
        keys = ad.concat([
            ad.reshape(ad.take(kn, inp.iu), (m, 1, nh, hd)),
            ad.reshape(ad.take(kn, inp.ju), (m, 1, nh, hd)),
            ad.reshape(self._lin(G, f"{p}.kg", False), (m, 1, nh, hd)),
        ], axis=1)
        vals = ad.concat([
            ad.reshape(ad.take(vn, inp.iu), (m, 1, nh, hd)),
            ad.reshape(ad.take(vn, inp.ju), (m, 1, nh, hd)),
            ad.reshape(self._lin(G, f"{p}.vg", False), (m, 1, nh, hd)),
        ], axis=1)
        scores = ad.reduce_sum(ad.expand(q, (m, 3, nh, hd)) * keys, axis=3) / math.sqrt(hd)  # (m, 3, H)
        attn = ad.softmax(scores, axis=1)
        msg = ad.reduce_sum(ad.expand(ad.reshape(attn, (m, 3, nh, 1)), (m, 3, nh, hd)) * vals, axis=1)
        return self._lin(ad.reshape(msg, (m, d)), f"{p}.o")

    def boundary_attention(self, H, inp: _Inputs, l: int):
        """Cross-attention from node slots to boundary tokens."""
        n, d, nh = inp.n, self.cfg.d, self.cfg.n_heads
        hd = d // nh
        if not self.flags.use_boundary_cross_attention:
            return None
        p = f"blk{l}.bd"
        if self.flags.use_boundary_prior:
            k_tok = inp.tokens.shape[0]
            if k_tok == 0:
                return None
            U = self._lin(ad.gelu(self._lin(inp.tokens, "bd.tok1")), "bd.tok2")
            rel = (inp.B[:, None, :3] - inp.token_pos[None, :, :]).reshape(n * k_tok, 3)
            eta_rel = ad.transpose(ad.reshape(self._mlp_bias(ad.Tensor(rel), f"blk{l}.eta_rel"), (n, k_tok, nh)), (2, 0, 1))
            eta_side = ad.reshape(ad.transpose(self._lin(inp.token_side, f"blk{l}.eta_side")), (nh, 1, k_tok))
            bias = eta_rel + ad.expand(eta_side, (nh, n, k_tok))
        else:
            k_tok = 1
            U = self.params["bd.null"]
            bias = None
        q = self._heads(self._lin(H, f"{p}.q", False), n)
        k = self._heads(self._lin(U, f"{p}.k", False), k_tok)
        v = self._heads(self._lin(U, f"{p}.v", False), k_tok)
        scores = ad.matmul(q, ad.transpose(k, (0, 2, 1))) / math.sqrt(hd)  # (H, n, k)
        if bias is not None:
            scores = scores + bias
        attn = ad.softmax(scores, axis=-1)
        msg = ad.matmul(attn, v)  # (H, n, hd)
        return self._lin(ad.reshape(ad.transpose(msg, (1, 0, 2)), (n, d)), f"{p}.o")

    def _film(self, ctx, name, rows):
        d = self.cfg.d
        if not self.flags.use_gti_coupling:
            return None, None
        gb = self._lin(ctx, name)
        return gb[:, :d], gb[:, d:]

    def gti_block(self, H, G, inp: _Inputs, time_emb, l: int):
        n, m, d = inp.n, inp.m, self.cfg.d
        p = f"blk{l}"
        mh = self.node_attention(H, G, inp, l)
        me = self.edge_attention(H, G, inp, l)
        mbd = self.boundary_attention(H, inp, l)
        xh = H + mh if mbd is None else H + mh + mbd
        xe = G + me
        # cross-branch conditioning: nodes see their incident edges, edges their endpoints
        ctx_h = ad.concat([ad.matmul(ad.Tensor(inp.incidence), G), ad.expand(ad.reshape(time_emb, (1, d)), (n, d))], axis=1)
        ctx_e = ad.concat([ad.take(H, inp.iu) + ad.take(H, inp.ju), ad.expand(ad.reshape(time_emb, (1, d)), (m, d))], axis=1)
        gh, bh = self._film(ctx_h, f"{p}.film_h", n)
        ge, be = self._film(ctx_e, f"{p}.film_e", m)
        Hn = ad.layer_norm(xh, self.params[f"{p}.ln_h.scale"], self.params[f"{p}.ln_h.shift"])
        Gn = ad.layer_norm(xe, self.params[f"{p}.ln_e.scale"], self.params[f"{p}.ln_e.shift"])
        if gh is not None:
            Hn = gh * Hn + bh
            Gn = ge * Gn + be
        return Hn, Gn

    def forward(self, state: PoreGraph, gb: BoundaryGraph | None, t: int) -> DenoiserOutput:
        inp = self.prepare(state, gb, t)
        temb = self.time_embedding(inp)
        H, G = self.embed(inp, temb)
        for l in range(self.cfg.n_blocks):
            H, G = self.gti_block(H, G, inp, temb, l)
        eps = self._lin(H, "out.eps")
        if not self.flags.use_discrete_topology:
            pc, pe = self.heuristic_labels(state, eps.data, t)
            return DenoiserOutput(eps, ad.Tensor(pc), ad.Tensor(pe))
        p_c = ad.softmax(self._lin(H, "out.c"), axis=1)
        pair = ad.concat([G, ad.take(H, inp.iu) + ad.take(H, inp.ju)], axis=1)
        p_e = ad.softmax(self._lin(ad.gelu(self._lin(pair, "out.e1")), "out.e2"), axis=1)
        return DenoiserOutput(eps, p_c, p_e)

    def predict(self, state: PoreGraph, gb: BoundaryGraph | None, t: int):
        out = self.forward(state, gb, t)
        return out.eps.data, out.p_c.data, out.p_e.data

    __call__ = predict

    def heuristic_labels(self, state: PoreGraph, eps_hat: np.ndarray, t: int):
        """Label rule used when discrete topology diffusion is switched off.

        A node is active when its predicted clean sphere has radius above
        ``heuristic_r_min`` voxels and a centroid inside the domain; a pair
        of active nodes is a throat when their spheres overlap.
        """
        if self.schedule is None:
            raise ConfigError("heuristic labels need the noise schedule")
        a = self.schedule.alpha_bar[t]
        B0 = (state.B - math.sqrt(1.0 - a) * eps_hat) / math.sqrt(a)
        scale = coord_scale(state.dims)
        vox = B0 * scale
        inside = np.all((B0[:, :3] >= 0.0) & (B0[:, :3] <= 1.0), axis=1)
        active = inside & (vox[:, 3] > self.cfg.heuristic_r_min)
        iu, ju = edge_index(state.n_max)
        dist = np.linalg.norm(vox[iu, :3] - vox[ju, :3], axis=1)
        throat = active[iu] & active[ju] & (dist < vox[iu, 3] + vox[ju, 3])
        return one_hot(active.astype(int), 2), one_hot(throat.astype(int), 2)


# --- checkpoints -------------------------------------------------------------

def save_checkpoint(model: Denoiser, path, extra: dict | None = None) -> None:
    """Write ``manifest.json`` and ``params.bin`` (little-endian float64) under ``path``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    payload = b"".join(np.ascontiguousarray(p.data, dtype="<f8").tobytes() for p in model.params)
    manifest = {
        "format": "porodiff-checkpoint",
        "version": 1,
        "config": model.cfg.to_dict(),
        "flags": model.flags.to_dict(),
        "schedule": None if model.schedule is None else model.schedule.to_dict(),
        "schedule_hash": None if model.schedule is None else model.schedule.hash(),
        "shapes": [[name, list(p.shape)] for name, p in model.params.tensors.items()],
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
        "extra": extra or {},
    }
    tmp = path / "params.bin.tmp"
    tmp.write_bytes(payload)
    os.replace(tmp, path / "params.bin")
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_checkpoint(path) -> Denoiser:
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text())
    if manifest.get("format") != "porodiff-checkpoint":
        raise FormatError("not a checkpoint manifest")
    raw = (path / "params.bin").read_bytes()
    if hashlib.sha256(raw).hexdigest() != manifest["payload_sha256"]:
        raise FormatError("checkpoint payload hash mismatch")
    flat = np.frombuffer(raw, dtype="<f8")
    tensors, off = OrderedDict(), 0
    for name, shape in manifest["shapes"]:
        size = int(np.prod(shape)) if shape else 1
        tensors[name] = ad.Parameter(flat[off:off + size].reshape(shape).astype(np.float64), name=name)
        off += size
    if off != flat.size:
        raise FormatError("checkpoint payload length mismatch")
    schedule = None if manifest["schedule"] is None else NoiseSchedule.from_dict(manifest["schedule"])
    return Denoiser(
        DenoiserParams(tensors), DenoiserConfig(**manifest["config"]), AblationFlags(**manifest["flags"]), schedule
    )
