"""Bi-LSTM -> Transformer regression network with hand-derived gradients.

Everything runs on plain numpy arrays batched as (B, T, ...). Each forward
function returns a cache holding exactly what its backward needs, and each
backward returns the input gradient plus parameter gradients keyed like the
parameter dict. The arithmetic is dtype-neutral: float64 inputs/params give
float64 throughout (used by the finite-difference tests); training uses
float32 for speed.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError


def _sigmoid_into(x, out):
    """Numerically stable sigmoid via tanh, written into `out`."""
    np.multiply(x, 0.5, out=out)
    np.tanh(out, out=out)
    out += 1.0
    out *= 0.5
    return out


@dataclass
class ModelConfig:
    window_len: int = 125
    input_channels: int = 35
    bilstm_units: int = 125
    embed_dim: int = 256
    num_heads: int = 8
    ffn_dim: int = 512
    dropout_rate: float = 0.1
    layernorm_eps: float = 1e-6
    horizon_len: int = 25
    output_channels: int = 6
    positional_encoding: bool = False

    def __post_init__(self):
        dims = (self.window_len, self.input_channels, self.bilstm_units,
                self.embed_dim, self.num_heads, self.ffn_dim, self.horizon_len,
                self.output_channels)
        if any(d <= 0 for d in dims):
            raise ConfigError("all model dimensions must be positive")
        if self.embed_dim % self.num_heads != 0:
            raise ConfigError(
                f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must lie in [0, 1)")

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def param_shapes(cfg):
    """Canonical name -> shape map; every learnable tensor of the network."""
    h, c, e = cfg.bilstm_units, cfg.input_channels, cfg.embed_dim
    f = cfg.ffn_dim
    head_in = cfg.window_len * e
    head_out = cfg.horizon_len * cfg.output_channels
    shapes = {}
    for d in ("fw", "bw"):
        shapes[f"lstm_{d}.Wx"] = (c, 4 * h)
        shapes[f"lstm_{d}.Wh"] = (h, 4 * h)
        shapes[f"lstm_{d}.b"] = (4 * h,)
    shapes["proj.W"] = (2 * h, e)
    shapes["proj.b"] = (e,)
    for n in ("q", "k", "v", "o"):
        shapes[f"attn.W{n}"] = (e, e)
        shapes[f"attn.b{n}"] = (e,)
    shapes["ln1.g"] = (e,)
    shapes["ln1.b"] = (e,)
    shapes["ffn.W1"] = (e, f)
    shapes["ffn.b1"] = (f,)
    shapes["ffn.W2"] = (f, e)
    shapes["ffn.b2"] = (e,)
    shapes["ln2.g"] = (e,)
    shapes["ln2.b"] = (e,)
    shapes["head.W"] = (head_in, head_out)
    shapes["head.b"] = (head_out,)
    return shapes


def param_count(cfg):
    return sum(int(np.prod(s)) for s in param_shapes(cfg).values())


def _glorot(rng, shape, dtype):
    fan_in, fan_out = shape[0], shape[1]
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def _orthogonal(rng, n, dtype):
    a = rng.standard_normal((n, n))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    return q.astype(dtype)


def init_params(cfg, seed, dtype=np.float32):
    """Deterministic initialization: Glorot-uniform dense weights, orthogonal
    recurrent blocks, zero biases except LSTM forget gate = 1, layer-norm
    scale = 1 / shift = 0."""
    rng = np.random.default_rng(seed)
    h = cfg.bilstm_units
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".Wh"):
            blocks = [_orthogonal(rng, h, dtype) for _ in range(4)]
            params[name] = np.concatenate(blocks, axis=1)
        elif name.endswith(("W", "Wx", "W1", "W2", "Wq", "Wk", "Wv", "Wo")):
            params[name] = _glorot(rng, shape, dtype)
        elif name in ("ln1.g", "ln2.g"):
            params[name] = np.ones(shape, dtype=dtype)
        elif name.startswith("lstm_") and name.endswith(".b"):
            b = np.zeros(shape, dtype=dtype)
            b[h:2 * h] = 1.0  # forget-gate bias
            params[name] = b
        else:
            params[name] = np.zeros(shape, dtype=dtype)
    return params


# ---------------------------------------------------------------------------
# layers


def linear_forward(x, w, b):
    """y = x @ w + b over the last axis."""
    y = x @ w + b
    return y, (x, w)


def linear_backward(dy, cache):
    x, w = cache
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    dw = x2.T @ dy2
    db = dy2.sum(axis=0)
    dx = (dy2 @ w.T).reshape(x.shape)
    return dx, dw, db


def lstm_forward(x, wx, wh, b):
    """Unidirectional LSTM over (B, T, C); gate layout [i, f, o, g].

    Returns hidden states (B, T, H) and the cache needed for exact BPTT.
    Internals run time-major so the recurrence touches contiguous blocks.
    """
    bsz, t_len, _ = x.shape
    h = wh.shape[0]
    xt = np.ascontiguousarray(x.transpose(1, 0, 2))  # (T, B, C)
    xp = (xt.reshape(t_len * bsz, -1) @ wx).reshape(t_len, bsz, 4 * h)
    gates = np.empty((t_len, bsz, 4 * h), dtype=x.dtype)
    cs = np.empty((t_len, bsz, h), dtype=x.dtype)
    hs = np.empty((t_len, bsz, h), dtype=x.dtype)
    tancs = np.empty((t_len, bsz, h), dtype=x.dtype)
    h_t = np.zeros((bsz, h), dtype=x.dtype)
    c_t = np.zeros((bsz, h), dtype=x.dtype)
    z = np.empty((bsz, 4 * h), dtype=x.dtype)
    for t in range(t_len):
        np.matmul(h_t, wh, out=z)
        z += xp[t]
        z += b
        gt = gates[t]
        _sigmoid_into(z[:, :3 * h], gt[:, :3 * h])  # i, f, o
        np.tanh(z[:, 3 * h:], out=gt[:, 3 * h:])    # g
        i, f, o, g = (gt[:, :h], gt[:, h:2 * h], gt[:, 2 * h:3 * h], gt[:, 3 * h:])
        ct = cs[t]
        np.multiply(f, c_t, out=ct)
        ct += i * g
        c_t = ct
        np.tanh(c_t, out=tancs[t])
        np.multiply(o, tancs[t], out=hs[t])
        h_t = hs[t]
    out = np.ascontiguousarray(hs.transpose(1, 0, 2))
    return out, (xt, x.shape, wx, wh, gates, cs, hs, tancs)


def lstm_backward(dh_out_tm, cache):
    """Backpropagation through time; takes the output gradient time-major."""
    xt, x_shape, wx, wh, gates, cs, hs, tancs = cache
    t_len, bsz, h = dh_out_tm.shape
    dz_all = np.empty((t_len, bsz, 4 * h), dtype=xt.dtype)
    dwh = np.zeros_like(wh)
    dh = np.zeros((bsz, h), dtype=xt.dtype)
    dc = np.zeros((bsz, h), dtype=xt.dtype)
    for t in range(t_len - 1, -1, -1):
        gt = gates[t]
        i, f, o, g = (gt[:, :h], gt[:, h:2 * h], gt[:, 2 * h:3 * h], gt[:, 3 * h:])
        tc = tancs[t]
        dh_t = dh_out_tm[t] + dh
        do = dh_t * tc
        dc += dh_t * o * (1.0 - tc * tc)
        dz = dz_all[t]
        np.multiply(dc * g, i * (1.0 - i), out=dz[:, :h])
        if t > 0:
            np.multiply(dc * cs[t - 1], f * (1.0 - f), out=dz[:, h:2 * h])
        else:
            dz[:, h:2 * h] = 0.0  # c_{-1} = 0
        np.multiply(do, o * (1.0 - o), out=dz[:, 2 * h:3 * h])
        np.multiply(dc * i, 1.0 - g * g, out=dz[:, 3 * h:])
        if t > 0:
            dwh += hs[t - 1].T @ dz
        dh = dz @ wh.T
        dc *= f
    dz2 = dz_all.reshape(t_len * bsz, 4 * h)
    dwx = xt.reshape(t_len * bsz, -1).T @ dz2
    db = dz2.sum(axis=0)
    dxt = (dz2 @ wx.T).reshape(t_len, bsz, x_shape[-1])
    dx = dxt.transpose(1, 0, 2)
    return dx, dwx, dwh, db


def bilstm_forward(params, x):
    """Forward and backward LSTM passes concatenated per timestep."""
    h_fw, cache_fw = lstm_forward(x, params["lstm_fw.Wx"], params["lstm_fw.Wh"],
                                  params["lstm_fw.b"])
    h_bwr, cache_bw = lstm_forward(x[:, ::-1], params["lstm_bw.Wx"],
                                   params["lstm_bw.Wh"], params["lstm_bw.b"])
    y = np.concatenate([h_fw, h_bwr[:, ::-1]], axis=2)
    return y, (cache_fw, cache_bw)


def bilstm_backward(dy, cache):
    cache_fw, cache_bw = cache
    h = dy.shape[-1] // 2
    dh_fw_tm = np.ascontiguousarray(dy[:, :, :h].transpose(1, 0, 2))
    dh_bw_tm = np.ascontiguousarray(dy[:, ::-1, h:].transpose(1, 0, 2))
    dx_fw, dwx_f, dwh_f, db_f = lstm_backward(dh_fw_tm, cache_fw)
    dx_bwr, dwx_b, dwh_b, db_b = lstm_backward(dh_bw_tm, cache_bw)
    dx = dx_fw + dx_bwr[:, ::-1]
    grads = {"lstm_fw.Wx": dwx_f, "lstm_fw.Wh": dwh_f, "lstm_fw.b": db_f,
             "lstm_bw.Wx": dwx_b, "lstm_bw.Wh": dwh_b, "lstm_bw.b": db_b}
    return dx, grads


def _split_heads(x, num_heads):
    bsz, t_len, e = x.shape
    return np.ascontiguousarray(
        x.reshape(bsz, t_len, num_heads, e // num_heads).transpose(0, 2, 1, 3))


def _merge_heads(x):
    bsz, nh, t_len, dh = x.shape
    return np.ascontiguousarray(x.transpose(0, 2, 1, 3)).reshape(bsz, t_len, nh * dh)


def _dot_abT(a, b, out):
    """Batched a @ b^T over leading dims flattened to one; BLAS per slice."""
    n, t, _ = a.shape
    for i in range(n):
        np.dot(a[i], b[i].T, out=out[i])
    return out


def _dot_aTb(a, b, out):
    """Batched a^T @ b over leading dims flattened to one; BLAS per slice."""
    n = a.shape[0]
    for i in range(n):
        np.dot(a[i].T, b[i], out=out[i])
    return out


def multi_head_attention_forward(params, x, num_heads):
    """Scaled dot-product self-attention; per-row softmax over keys."""
    q_lin, cq = linear_forward(x, params["attn.Wq"], params["attn.bq"])
    k_lin, ck = linear_forward(x, params["attn.Wk"], params["attn.bk"])
    v_lin, cv = linear_forward(x, params["attn.Wv"], params["attn.bv"])
    q = _split_heads(q_lin, num_heads)
    k = _split_heads(k_lin, num_heads)
    v = _split_heads(v_lin, num_heads)
    bsz, nh, t_len, dh = q.shape
    scale = 1.0 / math.sqrt(dh)
    scores = np.empty((bsz * nh, t_len, t_len), dtype=x.dtype)
    _dot_abT(q.reshape(bsz * nh, t_len, dh), k.reshape(bsz * nh, t_len, dh), scores)
    scores = scores.reshape(bsz, nh, t_len, t_len)
    scores *= scale
    scores -= scores.max(axis=-1, keepdims=True)
    np.exp(scores, out=scores)
    scores /= scores.sum(axis=-1, keepdims=True)
    attn = scores  # (B, nH, T, T), rows sum to 1
    ctx = _merge_heads(attn @ v)
    out, co = linear_forward(ctx, params["attn.Wo"], params["attn.bo"])
    return out, (cq, ck, cv, co, q, k, v, attn, scale)


def multi_head_attention_backward(dout, cache):
    cq, ck, cv, co, q, k, v, attn, scale = cache
    bsz, nh, t_len, dh = q.shape
    q3 = q.reshape(bsz * nh, t_len, dh)
    k3 = k.reshape(bsz * nh, t_len, dh)
    v3 = v.reshape(bsz * nh, t_len, dh)
    a3 = attn.reshape(bsz * nh, t_len, t_len)
    dctx, dwo, dbo = linear_backward(dout, co)
    dctx3 = _split_heads(dctx, nh).reshape(bsz * nh, t_len, dh)
    dattn = np.empty_like(a3)
    _dot_abT(dctx3, v3, dattn)
    dv3 = np.empty_like(v3)
    _dot_aTb(a3, dctx3, dv3)
    # softmax backward, in place on dattn
    dattn -= (dattn * a3).sum(axis=-1, keepdims=True)
    dattn *= a3
    dattn *= scale
    dscores = dattn
    dq3 = dscores @ k3
    dk3 = np.empty_like(k3)
    _dot_aTb(dscores, q3, dk3)
    shape4 = (bsz, nh, t_len, dh)
    dx_q, dwq, dbq = linear_backward(_merge_heads(dq3.reshape(shape4)), cq)
    dx_k, dwk, dbk = linear_backward(_merge_heads(dk3.reshape(shape4)), ck)
    dx_v, dwv, dbv = linear_backward(_merge_heads(dv3.reshape(shape4)), cv)
    dx = dx_q + dx_k + dx_v
    grads = {"attn.Wq": dwq, "attn.bq": dbq, "attn.Wk": dwk, "attn.bk": dbk,
             "attn.Wv": dwv, "attn.bv": dbv, "attn.Wo": dwo, "attn.bo": dbo}
    return dx, grads


def layer_norm_forward(x, gamma, beta, eps):
    """Normalize over the last axis, then scale and shift."""
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv_std
    return gamma * xhat + beta, (xhat, inv_std, gamma)


def layer_norm_backward(dy, cache):
    xhat, inv_std, gamma = cache
    dxhat = dy * gamma
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = inv_std * (dxhat - m1 - xhat * m2)
    axes = tuple(range(dy.ndim - 1))
    dgamma = (dy * xhat).sum(axis=axes)
    dbeta = dy.sum(axis=axes)
    return dx, dgamma, dbeta


def dropout_mask(rng, shape, rate, dtype):
    """Inverted-dropout mask: zeros with probability `rate`, else 1/(1-rate)."""
    dt = np.dtype(dtype)
    draw_dt = np.float32 if dt == np.float32 else np.float64
    return (rng.random(shape, dtype=draw_dt) >= rate).astype(dt) / dt.type(1.0 - rate)


def _make_masks(cfg, shape, mode, rng, masks, dtype):
    if masks is not None:
        return masks
    if mode == "train" and cfg.dropout_rate > 0.0:
        if rng is None:
            raise ConfigError("train mode with dropout requires an rng or masks")
        return (dropout_mask(rng, shape, cfg.dropout_rate, dtype),
                dropout_mask(rng, shape, cfg.dropout_rate, dtype))
    return None, None


def ffn_forward(params, x):
    h1, c1 = linear_forward(x, params["ffn.W1"], params["ffn.b1"])
    a = np.maximum(h1, 0.0)
    y, c2 = linear_forward(a, params["ffn.W2"], params["ffn.b2"])
    return y, (c1, c2, h1 > 0)


def ffn_backward(dy, cache):
    c1, c2, relu_mask = cache
    da, dw2, db2 = linear_backward(dy, c2)
    da *= relu_mask
    dx, dw1, db1 = linear_backward(da, c1)
    return dx, {"ffn.W1": dw1, "ffn.b1": db1, "ffn.W2": dw2, "ffn.b2": db2}


def transformer_block_forward(params, cfg, x, mode="eval", rng=None, masks=None):
    """Post-norm residual block: attention sub-block then feed-forward sub-block.

    Dropout acts on each branch before the residual add (inverted scaling in
    train mode, identity in eval mode). `masks` replays fixed dropout masks.
    """
    m1, m2 = _make_masks(cfg, x.shape, mode, rng, masks, x.dtype)
    att, c_att = multi_head_attention_forward(params, x, cfg.num_heads)
    branch1 = att if m1 is None else att * m1
    y, c_ln1 = layer_norm_forward(x + branch1, params["ln1.g"], params["ln1.b"],
                                  cfg.layernorm_eps)
    f, c_ffn = ffn_forward(params, y)
    branch2 = f if m2 is None else f * m2
    z, c_ln2 = layer_norm_forward(y + branch2, params["ln2.g"], params["ln2.b"],
                                  cfg.layernorm_eps)
    return z, (c_att, c_ln1, c_ffn, c_ln2, m1, m2)


def transformer_block_backward(dz, cache):
    c_att, c_ln1, c_ffn, c_ln2, m1, m2 = cache
    grads = {}
    dsum2, grads["ln2.g"], grads["ln2.b"] = layer_norm_backward(dz, c_ln2)
    df = dsum2 if m2 is None else dsum2 * m2
    dy_ffn, g_ffn = ffn_backward(df, c_ffn)
    grads.update(g_ffn)
    dy = dsum2 + dy_ffn
    dsum1, grads["ln1.g"], grads["ln1.b"] = layer_norm_backward(dy, c_ln1)
    datt = dsum1 if m1 is None else dsum1 * m1
    dx_att, g_att = multi_head_attention_backward(datt, c_att)
    grads.update(g_att)
    dx = dsum1 + dx_att
    return dx, grads


def head_forward(params, x, horizon_len, output_channels):
    """Flatten all timesteps, one affine map, reshape to (horizon, channels)."""
    bsz = x.shape[0]
    flat = x.reshape(bsz, -1)
    y, cache = linear_forward(flat, params["head.W"], params["head.b"])
    return y.reshape(bsz, horizon_len, output_channels), (cache, x.shape)


def head_backward(dy, cache):
    lin_cache, x_shape = cache
    dflat, dw, db = linear_backward(dy.reshape(dy.shape[0], -1), lin_cache)
    return dflat.reshape(x_shape), {"head.W": dw, "head.b": db}


def positional_encoding(t_len, dim, dtype=np.float64):
    pos = np.arange(t_len, dtype=np.float64)[:, None]
    i = np.arange(dim)[None, :]
    angle = pos / np.power(10000.0, (2.0 * (i // 2)) / dim)
    pe = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return pe.astype(dtype)


def model_forward(params, cfg, x, mode="eval", rng=None, masks=None):
    """Full network: Bi-LSTM -> projection -> transformer block -> reshape head.

    Accepts one frame (T, C) or a batch (B, T, C); eval mode is deterministic.
    """
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    if x.shape[1] != cfg.window_len or x.shape[2] != cfg.input_channels:
        raise DataError(
            f"input shape {x.shape[1:]} does not match "
            f"({cfg.window_len}, {cfg.input_channels})")
    h, c_bilstm = bilstm_forward(params, x)
    e, c_proj = linear_forward(h, params["proj.W"], params["proj.b"])
    if cfg.positional_encoding:
        e = e + positional_encoding(cfg.window_len, cfg.embed_dim, dtype=e.dtype)
    z, c_block = transformer_block_forward(params, cfg, e, mode=mode, rng=rng,
                                           masks=masks)
    out, c_head = head_forward(params, z, cfg.horizon_len, cfg.output_channels)
    cache = {"bilstm": c_bilstm, "proj": c_proj, "block": c_block, "head": c_head,
             "masks": (c_block[4], c_block[5]), "squeeze": squeeze}
    return (out[0] if squeeze else out), cache


def model_backward(dout, cache):
    """Exact gradients for every parameter given d(loss)/d(output)."""
    if cache["squeeze"]:
        dout = dout[None]
    dz, g_head = head_backward(dout, cache["head"])
    de, g_block = transformer_block_backward(dz, cache["block"])
    dh, dw_proj, db_proj = linear_backward(de, cache["proj"])
    dx, g_bilstm = bilstm_backward(dh, cache["bilstm"])
    grads = {}
    grads.update(g_head)
    grads.update(g_block)
    grads["proj.W"] = dw_proj
    grads["proj.b"] = db_proj
    grads.update(g_bilstm)
    if cache["squeeze"]:
        dx = dx[0]
    return dx, grads


# ---------------------------------------------------------------------------
# losses


def mse_loss(pred, target):
    if pred.shape != target.shape:
        raise DataError(f"shape mismatch {pred.shape} vs {target.shape}")
    d = pred - target
    return float(np.mean(d * d, dtype=np.float64))


def mse_loss_grad(pred, target):
    """Loss and its gradient with respect to pred."""
    if pred.shape != target.shape:
        raise DataError(f"shape mismatch {pred.shape} vs {target.shape}")
    d = pred - target
    loss = float(np.mean(d * d, dtype=np.float64))
    return loss, (2.0 / d.size) * d


def mae_metric(pred, target):
    if pred.shape != target.shape:
        raise DataError(f"shape mismatch {pred.shape} vs {target.shape}")
    return float(np.mean(np.abs(pred - target), dtype=np.float64))
