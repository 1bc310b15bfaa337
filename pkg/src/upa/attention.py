"""Attention operators over point sets.

Implements global self-attention, its neighborhood-restricted variant,
and the two-branch local attention that scores each neighbor twice:
once from the neighbor's own feature (query-independent "unary" branch)
and once from the feature difference against the query (query-dependent
"pairwise" branch). Both branches share one value projection g; their
softmax-aggregated outputs pass through separate MLPs and are fused with
a residual, optionally through a learned sigmoid gate or with an added
positional encoding computed from neighbor coordinate offsets.

Score projections use position-independent einsum arithmetic so that two
queries sharing a neighbor receive bit-identical unary scores for it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import kernels
from .autodiff import Tensor
from .errors import ConfigError, ShapeError
from .geometry import NeighborIndex, group_features
from .nn import LinearParams, MlpParams

VARIANTS = (
    "global-sa",
    "local-sa",
    "upa-plain",
    "upa-positional",
    "upa-gated",
    "mean-pool",
    "max-pool",
)
UPA_VARIANTS = ("upa-plain", "upa-positional", "upa-gated")


def _project(a: Tensor, w: Tensor) -> Tensor:
    """Bias-free projection of the last axis, einsum-backed.

    Unlike BLAS matmul, the result for a row depends only on that row's
    values, never its position, which the unary-score exactness tests
    rely on.
    """
    if a.data.shape[-1] != w.data.shape[0]:
        raise ShapeError(f"projection shapes disagree: {a.shape} by {w.shape}")
    out = np.einsum("...d,dh->...h", a.data, w.data)

    def bwd(g):
        ga = np.einsum("...h,dh->...d", g, w.data)
        gw = np.einsum(
            "nd,nh->dh",
            a.data.reshape(-1, a.data.shape[-1]),
            g.reshape(-1, g.shape[-1]),
        )
        return ga, gw

    return ad.apply_op((a, w), out, bwd)


# ---------------------------------------------------------------------------
# parameter containers


@dataclass
class SaParams:
    """Query/key/value projections for dot-product self-attention."""

    wq: LinearParams
    wk: LinearParams
    wv: LinearParams
    heads: int

    def __post_init__(self):
        d_out = self.wq.d_out
        if not (self.wk.d_out == d_out == self.wv.d_out):
            raise ShapeError("q/k/v projections must share an output width")
        if self.heads < 1 or d_out % self.heads:
            raise ConfigError(f"heads={self.heads} must divide d_out={d_out}")

    @classmethod
    def create(cls, rng, d_in, d_out, heads=1, dtype=np.float64):
        make = lambda: LinearParams.create(rng, d_in, d_out, bias=False, dtype=dtype)
        return cls(make(), make(), make(), heads)

    @property
    def d_in(self):
        return self.wq.d_in

    @property
    def d_out(self):
        return self.wq.d_out

    def named_parameters(self, prefix=""):
        for tag, lin in (("wq", self.wq), ("wk", self.wk), ("wv", self.wv)):
            yield from lin.named_parameters(f"{prefix}{tag}.")


@dataclass
class UpaParams:
    """Learned pieces of one unary-pairwise attention block.

    w_u / w_e map a feature (resp. a feature difference) to one raw score
    per head; g is the shared value projection. alpha/beta transform the
    two aggregated outputs, gate predicts the sigmoid mixing score, and
    delta / w_u_pos / g_pos form the positional branch. Fields not needed
    by ``mode`` and ``components`` stay None.
    """

    mode: str                      # plain | gated | positional
    heads: int
    components: tuple
    g: LinearParams
    alpha: MlpParams | None = None
    beta: MlpParams | None = None
    w_u: LinearParams | None = None
    w_e: LinearParams | None = None
    gate: LinearParams | None = None
    delta: MlpParams | None = None
    w_u_pos: LinearParams | None = None
    g_pos: LinearParams | None = None

    def __post_init__(self):
        if self.mode not in ("plain", "gated", "positional"):
            raise ConfigError(f"unknown attention mode {self.mode!r}")
        bad = set(self.components) - {"unary", "pairwise"}
        if bad or not self.components:
            raise ConfigError(f"components must be a nonempty subset of unary/pairwise, got {self.components}")
        if self.mode == "gated" and set(self.components) != {"unary", "pairwise"}:
            raise ConfigError("gated fusion needs both the unary and pairwise components")
        if self.mode == "positional" and "unary" not in self.components:
            raise ConfigError("the positional branch extends the unary component")
        d_in = self.g.d_in
        if d_in % self.heads:
            raise ConfigError(f"heads={self.heads} must divide d_in={d_in}")
        for name, lin in (("w_u", self.w_u), ("w_e", self.w_e), ("w_u_pos", self.w_u_pos)):
            if lin is not None and lin.d_out != self.heads:
                raise ShapeError(f"{name} must emit {self.heads} scores, got {lin.d_out}")

    @classmethod
    def create(cls, rng, d_in, d_out, heads=1, mode="plain",
               components=("unary", "pairwise"), dtype=np.float64):
        components = tuple(components)
        score = lambda: LinearParams.create(rng, d_in, heads, bias=False, dtype=dtype)
        out_mlp = lambda: MlpParams.create(rng, [d_in, d_in, d_out], dtype=dtype)
        kw = dict(
            mode=mode,
            heads=heads,
            components=components,
            g=LinearParams.create(rng, d_in, d_in, bias=False, dtype=dtype),
        )
        if "unary" in components:
            kw["w_u"] = score()
            kw["alpha"] = out_mlp()
        if "pairwise" in components:
            kw["w_e"] = score()
            kw["beta"] = out_mlp()
        if mode == "gated":
            kw["gate"] = LinearParams.create(rng, d_in, 1, bias=True, dtype=dtype)
        if mode == "positional":
            kw["delta"] = MlpParams.create(rng, [3, d_in, d_in], dtype=dtype)
            kw["w_u_pos"] = score()
            kw["g_pos"] = LinearParams.create(rng, d_in, d_in, bias=False, dtype=dtype)
        return cls(**kw)

    @property
    def d_in(self):
        return self.g.d_in

    def named_parameters(self, prefix=""):
        parts = (
            ("g", self.g), ("alpha", self.alpha), ("beta", self.beta),
            ("w_u", self.w_u), ("w_e", self.w_e), ("gate", self.gate),
            ("delta", self.delta), ("w_u_pos", self.w_u_pos), ("g_pos", self.g_pos),
        )
        for tag, item in parts:
            if item is not None:
                yield from item.named_parameters(f"{prefix}{tag}.")


@dataclass
class MapCapture:
    """Row-stochastic attention weights captured from one branch."""

    label: str            # "sa", "unary", "pairwise", "positional"
    probs: np.ndarray     # (heads, M, K) with K = k for local, N for global
    neighbors: np.ndarray | None  # (M, k) key indices, None when already dense
    n_keys: int

    def dense(self):
        """Embed local maps into the full key axis (zeros outside)."""
        if self.neighbors is None:
            return self.probs
        h, m, k = self.probs.shape
        out = np.zeros((h, m, self.n_keys))
        rows = np.arange(m)[:, None]
        for t in range(h):
            np.add.at(out[t], (rows, self.neighbors), self.probs[t])
        return out


@dataclass
class AttentionOutput:
    features: Tensor
    maps: list | None = None


# ---------------------------------------------------------------------------
# operators


def self_attention_global(x: Tensor, p: SaParams, capture=False) -> AttentionOutput:
    """Dot-product attention of every point over all points, per head.

    Each output row is a softmax-convex combination of projected value
    rows; cost grows with the square of the point count.
    """
    if x.data.shape[-1] != p.d_in:
        raise ShapeError(f"input width {x.data.shape[-1]} does not match params d_in {p.d_in}")
    q, k, v = p.wq(x), p.wk(x), p.wv(x)
    dh = p.d_out // p.heads
    outs, probs = [], []
    for t in range(p.heads):
        qh = ad.slice_lastdim(q, t * dh, (t + 1) * dh)
        kh = ad.slice_lastdim(k, t * dh, (t + 1) * dh)
        vh = ad.slice_lastdim(v, t * dh, (t + 1) * dh)
        scores = ad.matmul(qh, ad.transpose2d(kh))
        w = ad.softmax_lastdim(scores)
        outs.append(ad.matmul(w, vh))
        if capture:
            probs.append(w.data.copy())
    features = ad.concat_lastdim(outs)
    maps = None
    if capture:
        n = x.data.shape[0]
        maps = [MapCapture("sa", np.stack(probs), None, n)]
    return AttentionOutput(features, maps)


def _dot_scores(q: Tensor, kg: Tensor, heads: int) -> Tensor:
    """Per-head dot products between each query and its grouped keys."""
    m, d = q.data.shape
    k = kg.data.shape[1]
    dh = d // heads
    qh = q.data.reshape(m, heads, dh)
    kgh = kg.data.reshape(m, k, heads, dh)
    s = np.einsum("mhd,mkhd->mkh", qh, kgh)

    def bwd(g):
        dq = np.einsum("mkh,mkhd->mhd", g, kgh).reshape(m, d)
        dkg = np.einsum("mkh,mhd->mkhd", g, qh).reshape(m, k, d)
        return dq, dkg

    return ad.apply_op((q, kg), s, bwd)


def upa_attend(scores: Tensor, values: Tensor, heads: int) -> Tensor:
    """Softmax the k neighbor scores per head and aggregate value slices.

    scores: (M, k, heads); values: (M, k, d) with heads | d. Head t's
    weights act on value columns [t*d/h, (t+1)*d/h); outputs concatenate.
    """
    out, _ = _attend_probs(scores, values, heads, want_probs=False)
    return out


def _attend_probs(scores: Tensor, values: Tensor, heads: int, want_probs):
    m, k, h = scores.data.shape
    d = values.data.shape[-1]
    if h != heads:
        raise ShapeError(f"scores carry {h} heads, expected {heads}")
    if values.data.shape[:2] != (m, k):
        raise ShapeError(f"values {values.shape} do not match scores {scores.shape}")
    if d % heads:
        raise ConfigError(f"heads={heads} must divide value width {d}")
    dh = d // heads
    s = scores.data
    shifted = s - s.max(axis=1, keepdims=True)
    w = np.exp(shifted)
    w /= w.sum(axis=1, keepdims=True)
    vh = values.data.reshape(m, k, heads, dh)
    out = np.einsum("mkh,mkhd->mhd", w, vh).reshape(m, d)

    def bwd(g):
        gh = g.reshape(m, heads, dh)
        dv = np.einsum("mkh,mhd->mkhd", w, gh).reshape(m, k, d)
        dw = np.einsum("mkhd,mhd->mkh", vh, gh)
        dot = (dw * w).sum(axis=1, keepdims=True)
        return w * (dw - dot), dv

    t = ad.apply_op((scores, values), out, bwd)
    probs = np.ascontiguousarray(np.transpose(w, (2, 0, 1))) if want_probs else None
    return t, probs


def self_attention_local(x: Tensor, nbr: NeighborIndex, p: SaParams,
                         capture=False) -> AttentionOutput:
    """Dot-product attention restricted to each query's k neighbors."""
    if x.data.shape[-1] != p.d_in:
        raise ShapeError(f"input width {x.data.shape[-1]} does not match params d_in {p.d_in}")
    q, k, v = p.wq(x), p.wk(x), p.wv(x)
    q_sel = ad.gather_rows(q, nbr.queries)
    kg = ad.gather_rows(k, nbr.neighbors)
    vg = ad.gather_rows(v, nbr.neighbors)
    scores = _dot_scores(q_sel, kg, p.heads)
    features, probs = _attend_probs(scores, vg, p.heads, want_probs=capture)
    maps = None
    if capture:
        maps = [MapCapture("sa", probs, nbr.neighbors.copy(), x.data.shape[0])]
    return AttentionOutput(features, maps)


def relation_unary(xg: Tensor, w_u: LinearParams) -> Tensor:
    """Score each grouped neighbor from its own feature alone.

    The score never sees the query, so any two queries sharing a
    neighbor assign it bit-identical scores.
    """
    return _project(xg, w_u.weight)


def relation_pairwise(xg: Tensor, xq: Tensor, w_e: LinearParams) -> Tensor:
    """Score each grouped neighbor from its offset against the query."""
    return _project(ad.sub_bcast_mid(xg, xq), w_e.weight)


def positional_scores(positions, nbr: NeighborIndex, delta: MlpParams,
                      w_u_pos: LinearParams, g_pos: LinearParams, heads: int,
                      capture=False):
    """Attention over encoded neighbor coordinate offsets.

    Offsets p_j - p_i go through the two-layer MLP delta; the result is
    treated like a neighbor feature in its own unary-style pipeline
    (scores from w_u_pos, values from g_pos). Returns the (M, k, heads)
    scores, the aggregated (M, d_in) positional encoding, and optionally
    the softmax weights.
    """
    if positions is None:
        raise ConfigError("the positional branch needs point coordinates")
    positions = np.asarray(positions, dtype=np.float64)
    pdiff = positions[nbr.neighbors] - positions[nbr.queries][:, None, :]
    x_pos = delta(Tensor(pdiff))
    scores = _project(x_pos, w_u_pos.weight)
    encoding, probs = _attend_probs(scores, g_pos(x_pos), heads, want_probs=capture)
    return scores, encoding, probs


def gated_fuse(u: Tensor, e: Tensor, x_res: Tensor, s_raw: Tensor) -> Tensor:
    """sigmoid(s) mixes the unary and pairwise outputs, residual added.

    The two mixing coefficients sum to one per point by construction.
    """
    gate = ad.sigmoid(s_raw)
    inv = ad.sub(Tensor(np.ones_like(gate.data)), gate)
    return ad.add(ad.add(ad.scale_rows(u, gate), ad.scale_rows(e, inv)), x_res)


# ---------------------------------------------------------------------------
# the attention block


@dataclass
class BlockParams:
    """One residual attention block: reduce MLP + attention + fusion."""

    variant: str
    reduce: LinearParams
    sa: SaParams | None = None
    upa: UpaParams | None = None
    pool_g: LinearParams | None = None
    pool_alpha: MlpParams | None = None

    @classmethod
    def create(cls, rng, d_raw, variant, heads=1,
               components=("unary", "pairwise"), dtype=np.float64):
        if variant not in VARIANTS:
            raise ConfigError(f"unknown block variant {variant!r}; choose from {VARIANTS}")
        d_red = max(1, d_raw // 2)
        if variant in ("global-sa", "local-sa", *UPA_VARIANTS) and d_red % heads:
            raise ConfigError(
                f"heads={heads} must divide the reduced width {d_red} (d_raw={d_raw})"
            )
        reduce = LinearParams.create(rng, d_raw, d_red, dtype=dtype)
        kw = dict(variant=variant, reduce=reduce)
        if variant in ("global-sa", "local-sa"):
            kw["sa"] = SaParams.create(rng, d_red, d_red, heads, dtype=dtype)
            kw["pool_alpha"] = MlpParams.create(rng, [d_red, d_red, d_raw], dtype=dtype)
        elif variant in UPA_VARIANTS:
            mode = variant.split("-", 1)[1]
            kw["upa"] = UpaParams.create(
                rng, d_red, d_raw, heads, mode=mode, components=components, dtype=dtype
            )
        else:  # mean-pool / max-pool
            kw["pool_g"] = LinearParams.create(rng, d_red, d_red, bias=False, dtype=dtype)
            kw["pool_alpha"] = MlpParams.create(rng, [d_red, d_red, d_raw], dtype=dtype)
        return cls(**kw)

    @property
    def d_raw(self):
        return self.reduce.d_in

    def named_parameters(self, prefix=""):
        yield from self.reduce.named_parameters(f"{prefix}reduce.")
        for tag, item in (("sa", self.sa), ("upa", self.upa),
                          ("pool_g", self.pool_g), ("alpha", self.pool_alpha)):
            if item is not None:
                yield from item.named_parameters(f"{prefix}{tag}.")


def attention_block(x_raw: Tensor, positions, nbr: NeighborIndex | None,
                    params: BlockParams, capture=False) -> AttentionOutput:
    """Reduce, attend (or pool), transform, fuse with the residual.

    Output width equals input width; zeroing the output MLPs makes the
    block the identity. ``nbr`` may be None only for global-sa.
    """
    variant = params.variant
    n = x_raw.data.shape[0]
    if variant == "upa-positional" and positions is None:
        raise ConfigError("the positional variant needs point coordinates")
    if variant != "global-sa":
        if nbr is None:
            raise ConfigError(f"variant {variant} needs a neighbor index")
        if nbr.queries.shape[0] != n:
            raise ShapeError(
                f"block needs one query per point: {nbr.queries.shape[0]} queries for {n} points"
            )
    if variant in UPA_VARIANTS and not capture and ad._active_tape is None:
        return AttentionOutput(Tensor(_upa_block_infer(x_raw.data, positions, nbr, params)))

    x = ad.relu(params.reduce(x_raw))
    maps = []

    if variant == "global-sa":
        att = self_attention_global(x, params.sa, capture)
        z = ad.add(params.pool_alpha(att.features), x_raw)
        return AttentionOutput(z, att.maps if capture else None)

    if variant == "local-sa":
        att = self_attention_local(x, nbr, params.sa, capture)
        z = ad.add(params.pool_alpha(att.features), x_raw)
        return AttentionOutput(z, att.maps if capture else None)

    if variant in ("mean-pool", "max-pool"):
        grouped = ad.gather_rows(params.pool_g(x), nbr.neighbors)
        pooled = ad.mean_reduce(grouped, axis=1) if variant == "mean-pool" \
            else ad.max_reduce(grouped, axis=1)
        z = ad.add(params.pool_alpha(pooled), x_raw)
        return AttentionOutput(z, None)

    # unary-pairwise family
    p = params.upa
    gx = p.g(x)
    g_grouped = ad.gather_rows(gx, nbr.neighbors)
    u = e = None
    if "unary" in p.components:
        score_pt = _project(x, p.w_u.weight)
        s_u = ad.gather_rows(score_pt, nbr.neighbors)
        y_u, probs_u = _attend_probs(s_u, g_grouped, p.heads, want_probs=capture)
        if capture:
            maps.append(MapCapture("unary", probs_u, nbr.neighbors.copy(), n))
        if p.mode == "positional":
            _, y_pos, probs_p = positional_scores(
                positions, nbr, p.delta, p.w_u_pos, p.g_pos, p.heads, capture
            )
            y_u = ad.add(y_u, y_pos)
            if capture:
                maps.append(MapCapture("positional", probs_p, nbr.neighbors.copy(), n))
        u = p.alpha(y_u)
    if "pairwise" in p.components:
        xg = ad.gather_rows(x, nbr.neighbors)
        xq = ad.gather_rows(x, nbr.queries)
        s_e = relation_pairwise(xg, xq, p.w_e)
        y_e, probs_e = _attend_probs(s_e, g_grouped, p.heads, want_probs=capture)
        if capture:
            maps.append(MapCapture("pairwise", probs_e, nbr.neighbors.copy(), n))
        e = p.beta(y_e)

    if p.mode == "gated":
        z = gated_fuse(u, e, x_raw, p.gate(x))
    else:
        z = x_raw
        if u is not None:
            z = ad.add(u, z)
        if e is not None:
            z = ad.add(e, z)
    return AttentionOutput(z, maps if capture else None)


# ---------------------------------------------------------------------------
# inference fast lane (no tape, no capture): fused kernels, no (M,k,d)
# value materialization for the feature branches


def _np_linear(lin: LinearParams, a):
    out = a @ lin.weight.data
    if lin.bias is not None:
        out = out + lin.bias.data
    return out


def _np_mlp(mlp: MlpParams, a):
    for i, layer in enumerate(mlp.layers):
        a = _np_linear(layer, a)
        if i + 1 < len(mlp.layers):
            a = np.maximum(a, 0.0)
    return a


def _upa_block_infer(x_raw, positions, nbr, params: BlockParams):
    p = params.upa
    x = np.maximum(_np_linear(params.reduce, x_raw), 0.0)
    idx = nbr.neighbors
    gx = x @ p.g.weight.data
    u = e = None
    if "unary" in p.components:
        s_u = np.einsum("nd,dh->nh", x, p.w_u.weight.data)[idx]
        y_u = kernels.attend(s_u, gx, idx, p.heads)
        if p.mode == "positional":
            pdiff = positions[idx] - positions[nbr.queries][:, None, :]
            x_pos = _np_mlp(p.delta, pdiff)
            s_pos = np.einsum("mkd,dh->mkh", x_pos, p.w_u_pos.weight.data)
            v_pos = x_pos @ p.g_pos.weight.data
            w = np.exp(s_pos - s_pos.max(axis=1, keepdims=True))
            w /= w.sum(axis=1, keepdims=True)
            m, k, _ = s_pos.shape
            dh = p.d_in // p.heads
            y_u = y_u + np.einsum(
                "mkh,mkhd->mhd", w, v_pos.reshape(m, k, p.heads, dh)
            ).reshape(m, p.d_in)
        u = _np_mlp(p.alpha, y_u)
    if "pairwise" in p.components:
        s_pt = np.einsum("nd,dh->nh", x, p.w_e.weight.data)
        s_e = s_pt[idx] - s_pt[nbr.queries][:, None, :]
        e = _np_mlp(p.beta, kernels.attend(s_e, gx, idx, p.heads))
    if p.mode == "gated":
        gate = 1.0 / (1.0 + np.exp(-_np_linear(p.gate, x)))
        return gate * u + (1.0 - gate) * e + x_raw
    z = x_raw
    if u is not None:
        z = z + u
    if e is not None:
        z = z + e
    return z
