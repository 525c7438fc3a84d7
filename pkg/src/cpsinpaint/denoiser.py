"""Tiny video diffusion transformer predicting rectified-flow velocities.

Inputs are channel-concatenated (noisy latent, masked-video latent, keep-mask)
and cut into spatio-temporal patches. Each block runs joint self-attention over
all tokens, cross-attention to the prompt tokens and a GELU MLP. Timestep (and,
for a distilled student, the guidance scale) modulates the self-attention and
MLP branches through adaptive layer norm with output gates.

Forward and backward passes are written out by hand in numpy; gradients are
exact for this graph.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from cpsinpaint import nn
from cpsinpaint.errors import NumericError, ShapeError

TIME_SCALE = 1000.0
GUIDANCE_SCALE = 100.0


@dataclass(frozen=True)
class DenoiserConfig:
    c_lat: int = 8
    d_model: int = 64
    n_heads: int = 4
    depth: int = 2
    patch: tuple[int, int, int] = (1, 2, 2)
    d_txt: int = 32
    n_txt: int = 8
    max_f: int = 3
    mlp_ratio: int = 4
    freq_dim: int = 32
    guidance: bool = False
    skip: bool = True  # linear input-patch -> output-patch path added to the transformer output
    dtype: str = "float32"

    def __post_init__(self):
        object.__setattr__(self, "patch", tuple(int(p) for p in self.patch))
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if self.depth < 1 or self.max_f < 1:
            raise ValueError("depth and max_f must be >= 1")
        if len(self.patch) != 3 or min(self.patch) < 1:
            raise ValueError(f"patch must be three positive extents, got {self.patch}")

    @property
    def in_channels(self) -> int:
        return 2 * self.c_lat + 1

    @property
    def patch_in(self) -> int:
        return int(np.prod(self.patch)) * self.in_channels

    @property
    def patch_out(self) -> int:
        return int(np.prod(self.patch)) * self.c_lat


@dataclass
class DenoiserInput:
    noisy: np.ndarray  # (t, h, w, c)
    cond_video: np.ndarray  # (t, h, w, c)
    cond_mask: np.ndarray  # (t, h, w) keep-map
    timestep: float
    prompt: np.ndarray  # (n_txt, d_txt)
    guidance: float | None = None


@dataclass
class TrainBatch:
    """Batched denoiser inputs plus regression target; leading axis is the batch."""

    noisy: np.ndarray
    cond_video: np.ndarray
    cond_mask: np.ndarray
    timestep: np.ndarray
    prompt: np.ndarray
    target: np.ndarray
    guidance: np.ndarray | None = None


def patchify(x: np.ndarray, patch: tuple[int, int, int]) -> np.ndarray:
    """``(B, t, h, w, C)`` -> ``(B, N, pt*ph*pw*C)`` with tokens ordered t, h, w."""
    B, t, h, w, C = x.shape
    pt, ph, pw = patch
    for name, n, p in (("t", t, pt), ("h", h, ph), ("w", w, pw)):
        if n % p:
            raise ShapeError(f"latent extent {name}={n} is not divisible by patch {p}", axis=name)
    x = x.reshape(B, t // pt, pt, h // ph, ph, w // pw, pw, C)
    x = x.transpose(0, 1, 3, 5, 2, 4, 6, 7)
    return x.reshape(B, (t // pt) * (h // ph) * (w // pw), pt * ph * pw * C)


def unpatchify(tokens: np.ndarray, grid: tuple[int, int, int], patch: tuple[int, int, int]) -> np.ndarray:
    B = tokens.shape[0]
    gt, gh, gw = grid
    pt, ph, pw = patch
    C = tokens.shape[-1] // (pt * ph * pw)
    x = tokens.reshape(B, gt, gh, gw, pt, ph, pw, C).transpose(0, 1, 4, 2, 5, 3, 6, 7)
    return x.reshape(B, gt * pt, gh * ph, gw * pw, C)


def token_count(t: int, h: int, w: int, patch: tuple[int, int, int]) -> int:
    return (t // patch[0]) * (h // patch[1]) * (w // patch[2])


def param_shapes(cfg: DenoiserConfig) -> dict[str, tuple[int, ...]]:
    d, F = cfg.d_model, cfg.freq_dim
    shapes: dict[str, tuple[int, ...]] = {
        "embed.w": (cfg.patch_in, d),
        "embed.b": (d,),
        "time.w1": (F, d),
        "time.b1": (d,),
        "time.w2": (d, d),
        "time.b2": (d,),
    }
    if cfg.guidance:
        shapes.update({"guide.w1": (F, d), "guide.b1": (d,), "guide.w2": (d, d), "guide.b2": (d,)})
    hid = cfg.mlp_ratio * d
    for i in range(cfg.depth):
        p = f"blocks.{i}."
        shapes.update({
            p + "mod.w": (d, 6 * d), p + "mod.b": (6 * d,),
            p + "attn.qkv.w": (d, 3 * d), p + "attn.qkv.b": (3 * d,),
            p + "attn.out.w": (d, d), p + "attn.out.b": (d,),
            p + "cross.q.w": (d, d), p + "cross.q.b": (d,),
            p + "cross.kv.w": (cfg.d_txt, 2 * d), p + "cross.kv.b": (2 * d,),
            p + "cross.out.w": (d, d), p + "cross.out.b": (d,),
            p + "mlp.w1": (d, hid), p + "mlp.b1": (hid,),
            p + "mlp.w2": (hid, d), p + "mlp.b2": (d,),
        })
    shapes.update({
        "final.mod.w": (d, 2 * d), "final.mod.b": (2 * d,),
        "final.w": (d, cfg.patch_out), "final.b": (cfg.patch_out,),
    })
    if cfg.skip:
        shapes.update({"skip.w": (cfg.patch_in, cfg.patch_out),
                       "skip.mod.w": (d, cfg.patch_out), "skip.mod.b": (cfg.patch_out,)})
    return shapes


# zero at init: adaptive-norm modulation (gates start closed), the output
# projection (untrained model predicts zero velocity) and the guidance branch
# output (a fresh student reproduces its teacher); the linear skip also starts
# at zero so an untrained model still predicts zero velocity
_ZERO_INIT = ("mod.w", "mod.b", "final.w", "final.b", "guide.w2", "guide.b2", "skip.w")


def init_params(cfg: DenoiserConfig, seed: int = 0) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(_ZERO_INIT) or name.endswith(".b") or len(shape) == 1:
            arr = np.zeros(shape)
        else:
            arr = rng.standard_normal(shape) / np.sqrt(shape[0])
        params[name] = arr.astype(cfg.dtype)
    return params


class VideoDiT:
    def __init__(self, cfg: DenoiserConfig, params: dict[str, np.ndarray] | None = None, seed: int = 0):
        self.cfg = cfg
        self.params = init_params(cfg, seed) if params is None else params
        expected = param_shapes(cfg)
        missing = set(expected) - set(self.params)
        if missing:
            raise ShapeError(f"missing parameters: {sorted(missing)}")
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise ShapeError(f"{name}: expected {shape}, got {self.params[name].shape}")
        self._pos_cache: dict[tuple[int, int, int], np.ndarray] = {}

    def param_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def copy(self) -> "VideoDiT":
        return VideoDiT(self.cfg, {k: v.copy() for k, v in self.params.items()})

    def _positions(self, grid: tuple[int, int, int]) -> np.ndarray:
        if grid not in self._pos_cache:
            self._pos_cache[grid] = nn.position_table(grid, self.cfg.d_model).astype(self.cfg.dtype)
        return self._pos_cache[grid]

    # ------------------------------------------------------------ forward

    def __call__(self, inp: DenoiserInput) -> np.ndarray:
        g = None if inp.guidance is None else np.array([inp.guidance])
        out = self.forward(
            inp.noisy[None], inp.cond_video[None], inp.cond_mask[None],
            np.array([inp.timestep]), inp.prompt[None], g,
        )
        return out[0]

    def forward(self, noisy, cond_video, cond_mask, timestep, prompt, guidance=None, cache=None):
        """Batched velocity prediction; fills ``cache`` (a dict) for ``backward`` when given."""
        cfg, P = self.cfg, self.params
        dt = np.dtype(cfg.dtype)
        if noisy.shape != cond_video.shape or noisy.shape[:4] != cond_mask.shape:
            raise ShapeError(
                f"noisy {noisy.shape}, cond_video {cond_video.shape} and cond_mask {cond_mask.shape} disagree"
            )
        if noisy.shape[-1] != cfg.c_lat:
            raise ShapeError(f"expected {cfg.c_lat} latent channels, got {noisy.shape[-1]}", axis="channels")
        B, t, h, w, _ = noisy.shape
        if t > cfg.max_f:
            raise ShapeError(f"{t} latent frames exceed the model window max_f={cfg.max_f}", axis="t")
        grid = (t // cfg.patch[0], h // cfg.patch[1], w // cfg.patch[2])

        x_in = np.concatenate([noisy, cond_video, cond_mask[..., None]], axis=-1).astype(dt)
        tokens = patchify(x_in, cfg.patch)
        x = tokens @ P["embed.w"] + P["embed.b"] + self._positions(grid)

        temb = nn.sinusoid(np.asarray(timestep) * TIME_SCALE, cfg.freq_dim).astype(dt)
        ta = temb @ P["time.w1"] + P["time.b1"]
        c = nn.silu(ta) @ P["time.w2"] + P["time.b2"]
        use_guide = cfg.guidance and guidance is not None
        if use_guide:
            gemb = nn.sinusoid(np.asarray(guidance) * GUIDANCE_SCALE, cfg.freq_dim).astype(dt)
            ga = gemb @ P["guide.w1"] + P["guide.b1"]
            c = c + nn.silu(ga) @ P["guide.w2"] + P["guide.b2"]
        sc = nn.silu(c)
        prompt = np.asarray(prompt, dtype=dt)

        blocks = []
        for i in range(cfg.depth):
            x, bc = self._block_forward(i, x, sc, prompt)
            if not np.isfinite(x).all():
                raise NumericError(f"non-finite activations in block {i}")
            blocks.append(bc)

        d = cfg.d_model
        modf = sc @ P["final.mod.w"] + P["final.mod.b"]
        shf, scf = modf[:, :d], modf[:, d:]
        xhf, rstdf = nn.layernorm(x)
        hf = xhf * (1 + scf[:, None]) + shf[:, None]
        out_tok = hf @ P["final.w"] + P["final.b"]
        if cfg.skip:
            # per-sample channel gain from the conditioning, so the path can follow 1/t
            skip_y = tokens @ P["skip.w"]
            skip_g = 1.0 + sc @ P["skip.mod.w"] + P["skip.mod.b"]
            out_tok = out_tok + skip_y * skip_g[:, None]
        out = unpatchify(out_tok, grid, cfg.patch)
        if not np.isfinite(out).all():
            raise NumericError("non-finite activations in output projection")

        if cache is not None:
            cache.update(
                tokens=tokens, temb=temb, ta=ta, c=c, sc=sc, prompt=prompt, blocks=blocks,
                xhf=xhf, rstdf=rstdf, scf=scf, hf=hf, grid=grid, use_guide=use_guide,
            )
            if cfg.skip:
                cache.update(skip_y=skip_y, skip_g=skip_g)
            if use_guide:
                cache.update(gemb=gemb, ga=ga)
        return out

    def _block_forward(self, i, x, sc, prompt):
        cfg, P = self.cfg, self.params
        p = f"blocks.{i}."
        d, H = cfg.d_model, cfg.n_heads
        mod = sc @ P[p + "mod.w"] + P[p + "mod.b"]
        sh1, sc1, g1, sh2, sc2, g2 = (mod[:, k * d:(k + 1) * d] for k in range(6))

        xh1, rstd1 = nn.layernorm(x)
        h1 = xh1 * (1 + sc1[:, None]) + sh1[:, None]
        qkv = h1 @ P[p + "attn.qkv.w"] + P[p + "attn.qkv.b"]
        q, k, v = (nn.split_heads(qkv[..., j * d:(j + 1) * d], H) for j in range(3))
        o, pa = nn.attention(q, k, v)
        om = nn.merge_heads(o)
        a = om @ P[p + "attn.out.w"] + P[p + "attn.out.b"]
        x1 = x + g1[:, None] * a

        xh2, rstd2 = nn.layernorm(x1)
        cq = nn.split_heads(xh2 @ P[p + "cross.q.w"] + P[p + "cross.q.b"], H)
        kv = prompt @ P[p + "cross.kv.w"] + P[p + "cross.kv.b"]
        ck, cv = nn.split_heads(kv[..., :d], H), nn.split_heads(kv[..., d:], H)
        co, pc = nn.attention(cq, ck, cv)
        com = nn.merge_heads(co)
        x2 = x1 + com @ P[p + "cross.out.w"] + P[p + "cross.out.b"]

        xh3, rstd3 = nn.layernorm(x2)
        h3 = xh3 * (1 + sc2[:, None]) + sh2[:, None]
        u = h3 @ P[p + "mlp.w1"] + P[p + "mlp.b1"]
        gu = nn.gelu(u)
        m = gu @ P[p + "mlp.w2"] + P[p + "mlp.b2"]
        x3 = x2 + g2[:, None] * m
        bc = dict(
            sc1=sc1, g1=g1, sc2=sc2, g2=g2, xh1=xh1, rstd1=rstd1, h1=h1, q=q, k=k, v=v, pa=pa, om=om,
            a=a, xh2=xh2, rstd2=rstd2, cq=cq, ck=ck, cv=cv, pc=pc, com=com, xh3=xh3, rstd3=rstd3,
            h3=h3, u=u, gu=gu, m=m,
        )
        return x3, bc

    # ------------------------------------------------------------ backward

    def backward(self, cache: dict, dout: np.ndarray) -> dict[str, np.ndarray]:
        """Gradients of ``sum(dout * forward(...))`` w.r.t. every parameter."""
        cfg, P = self.cfg, self.params
        d = cfg.d_model
        grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        dtok = patchify(np.asarray(dout, dtype=cfg.dtype), cfg.patch)

        dhf, grads["final.w"], grads["final.b"] = nn.linear_back(dtok, cache["hf"], P["final.w"])
        dxhf = dhf * (1 + cache["scf"][:, None])
        dmodf = np.concatenate([dhf.sum(axis=1), (dhf * cache["xhf"]).sum(axis=1)], axis=-1)
        dsc, grads["final.mod.w"], grads["final.mod.b"] = nn.linear_back(dmodf, cache["sc"], P["final.mod.w"])
        if cfg.skip:
            tok = cache["tokens"]
            dy = dtok * cache["skip_g"][:, None]
            grads["skip.w"] = tok.reshape(-1, tok.shape[-1]).T @ dy.reshape(-1, dy.shape[-1])
            dg = (dtok * cache["skip_y"]).sum(axis=1)
            dsc_skip, grads["skip.mod.w"], grads["skip.mod.b"] = nn.linear_back(dg, cache["sc"], P["skip.mod.w"])
            dsc = dsc + dsc_skip
        dx = nn.layernorm_back(dxhf, cache["xhf"], cache["rstdf"])

        for i in reversed(range(cfg.depth)):
            dx, dsc_i = self._block_backward(i, cache["blocks"][i], dx, cache["sc"], cache["prompt"], grads)
            dsc = dsc + dsc_i

        _, grads["embed.w"], grads["embed.b"] = nn.linear_back(dx, cache["tokens"], P["embed.w"])

        dc = nn.silu_back(dsc, cache["c"])
        dsa, grads["time.w2"], grads["time.b2"] = nn.linear_back(dc, nn.silu(cache["ta"]), P["time.w2"])
        dta = nn.silu_back(dsa, cache["ta"])
        _, grads["time.w1"], grads["time.b1"] = nn.linear_back(dta, cache["temb"], P["time.w1"])
        if cache["use_guide"]:
            dsg, grads["guide.w2"], grads["guide.b2"] = nn.linear_back(dc, nn.silu(cache["ga"]), P["guide.w2"])
            dga = nn.silu_back(dsg, cache["ga"])
            _, grads["guide.w1"], grads["guide.b1"] = nn.linear_back(dga, cache["gemb"], P["guide.w1"])
        return grads

    def _block_backward(self, i, bc, dx3, sc, prompt, grads):
        cfg, P = self.cfg, self.params
        p = f"blocks.{i}."
        d, H = cfg.d_model, cfg.n_heads

        # MLP branch
        dm = dx3 * bc["g2"][:, None]
        dg2 = (dx3 * bc["m"]).sum(axis=1)
        dgu, grads[p + "mlp.w2"], grads[p + "mlp.b2"] = nn.linear_back(dm, bc["gu"], P[p + "mlp.w2"])
        du = nn.gelu_back(dgu, bc["u"])
        dh3, grads[p + "mlp.w1"], grads[p + "mlp.b1"] = nn.linear_back(du, bc["h3"], P[p + "mlp.w1"])
        dsh2 = dh3.sum(axis=1)
        dsc2 = (dh3 * bc["xh3"]).sum(axis=1)
        dx2 = dx3 + nn.layernorm_back(dh3 * (1 + bc["sc2"][:, None]), bc["xh3"], bc["rstd3"])

        # cross-attention branch
        dcom, grads[p + "cross.out.w"], grads[p + "cross.out.b"] = nn.linear_back(dx2, bc["com"], P[p + "cross.out.w"])
        dcq, dck, dcv = nn.attention_back(nn.split_heads(dcom, H), bc["cq"], bc["ck"], bc["cv"], bc["pc"])
        dkv = np.concatenate([nn.merge_heads(dck), nn.merge_heads(dcv)], axis=-1)
        _, grads[p + "cross.kv.w"], grads[p + "cross.kv.b"] = nn.linear_back(dkv, prompt, P[p + "cross.kv.w"])
        dxh2, grads[p + "cross.q.w"], grads[p + "cross.q.b"] = nn.linear_back(
            nn.merge_heads(dcq), bc["xh2"], P[p + "cross.q.w"]
        )
        dx1 = dx2 + nn.layernorm_back(dxh2, bc["xh2"], bc["rstd2"])

        # self-attention branch
        da = dx1 * bc["g1"][:, None]
        dg1 = (dx1 * bc["a"]).sum(axis=1)
        dom, grads[p + "attn.out.w"], grads[p + "attn.out.b"] = nn.linear_back(da, bc["om"], P[p + "attn.out.w"])
        dq, dk, dv = nn.attention_back(nn.split_heads(dom, H), bc["q"], bc["k"], bc["v"], bc["pa"])
        dqkv = np.concatenate([nn.merge_heads(dq), nn.merge_heads(dk), nn.merge_heads(dv)], axis=-1)
        dh1, grads[p + "attn.qkv.w"], grads[p + "attn.qkv.b"] = nn.linear_back(dqkv, bc["h1"], P[p + "attn.qkv.w"])
        dsh1 = dh1.sum(axis=1)
        dsc1 = (dh1 * bc["xh1"]).sum(axis=1)
        dx = dx1 + nn.layernorm_back(dh1 * (1 + bc["sc1"][:, None]), bc["xh1"], bc["rstd1"])

        dmod = np.concatenate([dsh1, dsc1, dg1, dsh2, dsc2, dg2], axis=-1)
        dsc, grads[p + "mod.w"], grads[p + "mod.b"] = nn.linear_back(dmod, sc, P[p + "mod.w"])
        return dx, dsc


def loss_and_gradients(
    model: VideoDiT, batch: TrainBatch, stage: int, hole: np.ndarray | None = None
) -> tuple[float, dict[str, np.ndarray]]:
    """Stage 1: mean squared velocity error. Stage 2: squared error weighted by ``1 + hole``, then mean."""
    if stage not in (1, 2):
        raise ValueError(f"stage must be 1 or 2, got {stage}")
    cache: dict = {}
    pred = model.forward(
        batch.noisy, batch.cond_video, batch.cond_mask, batch.timestep, batch.prompt, batch.guidance, cache=cache
    )
    loss, dpred = velocity_loss(pred, batch.target, stage, hole)
    if not np.isfinite(loss):
        raise NumericError(f"non-finite stage-{stage} loss")
    return loss, model.backward(cache, dpred.astype(model.cfg.dtype))


def velocity_loss(
    pred: np.ndarray, target: np.ndarray, stage: int, hole: np.ndarray | None = None
) -> tuple[float, np.ndarray]:
    """Loss value and its gradient w.r.t. ``pred``; ``hole`` broadcasts over the channel axis."""
    err = pred.astype(np.float64) - target
    if stage == 2 and hole is not None:
        weight = 1.0 + np.asarray(hole, dtype=np.float64)[..., None]
    else:
        weight = np.ones(1)
    weighted = weight * err
    loss = float(np.mean(weighted * err))
    return loss, 2.0 * np.broadcast_to(weighted, err.shape) / err.size


def randomize(model: VideoDiT, seed: int, scale: float = 0.3) -> VideoDiT:
    """Copy with every parameter (zero-initialised ones included) drawn at random; for testing."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, p in model.params.items():
        std = scale if p.ndim == 1 else 1.0 / np.sqrt(p.shape[0])
        params[name] = (rng.standard_normal(p.shape) * std).astype(p.dtype)
    return VideoDiT(model.cfg, params)


def with_dtype(cfg: DenoiserConfig, dtype: str) -> DenoiserConfig:
    return dataclasses.replace(cfg, dtype=dtype)
