"""Pre-norm causal transformer over episode-history tokens, in NumPy.

Forward, hand-written backward, and a key/value cache for batched
autoregressive rollouts.  Parameters live in a flat ``dict`` whose insertion
order is the serialization order.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .vocab import N_ACTIONS, SPECIAL_IDS, VOCAB_SIZE

MASK_VALUE = 1e9
_GELU_C = math.sqrt(2.0 / math.pi)


class NonFiniteError(FloatingPointError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = VOCAB_SIZE
    n_actions: int = N_ACTIONS
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 256
    max_len: int = 128
    init_scale: float = 0.02
    dtype: str = "float32"

    def __post_init__(self) -> None:
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def param_shapes(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    d, f = cfg.d_model, cfg.d_ff
    shapes = [("tok_emb", (cfg.vocab_size, d)), ("pos_emb", (cfg.max_len, d))]
    for i in range(cfg.n_layers):
        shapes += [
            (f"h{i}.ln1_g", (d,)), (f"h{i}.ln1_b", (d,)),
            (f"h{i}.w_qkv", (d, 3 * d)), (f"h{i}.b_qkv", (3 * d,)),
            (f"h{i}.w_o", (d, d)), (f"h{i}.b_o", (d,)),
            (f"h{i}.ln2_g", (d,)), (f"h{i}.ln2_b", (d,)),
            (f"h{i}.w_ff1", (d, f)), (f"h{i}.b_ff1", (f,)),
            (f"h{i}.w_ff2", (f, d)), (f"h{i}.b_ff2", (d,)),
        ]
    shapes += [("lnf_g", (d,)), ("lnf_b", (d,)), ("w_out", (d, cfg.n_actions)),
               ("b_out", (cfg.n_actions,))]
    return shapes


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Normal(0, init_scale) weights and embeddings, zero biases, unit norm gains."""
    params = {}
    for name, shape in param_shapes(cfg):
        leaf = name.split(".")[-1]
        if leaf.endswith("_g"):
            arr = np.ones(shape)
        elif leaf.startswith("b_") or leaf.endswith("_b"):
            arr = np.zeros(shape)
        else:
            arr = rng.normal(0.0, cfg.init_scale, size=shape)
        params[name] = arr.astype(cfg.dtype)
    return params


def _layernorm(x, g, b, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * rstd
    return xhat * g + b, (xhat, rstd)


def _layernorm_back(dy, g, cache):
    xhat, rstd = cache
    dxhat = dy * g
    dx = rstd * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                 - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    red = tuple(range(dy.ndim - 1))
    return dx, (dy * xhat).sum(axis=red), dy.sum(axis=red)


def _gelu(x):
    t = np.tanh(_GELU_C * (x + 0.044715 * x ** 3))
    return 0.5 * x * (1.0 + t), t


def _gelu_back(dy, x, t):
    dt = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dt)


def _softmax(x, axis=-1):
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(x, axis=-1):
    z = x - x.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def mask_thought(logits: np.ndarray) -> np.ndarray:
    """Push the A, B, C logits down by 1e9; cardinal logits are untouched."""
    out = np.array(logits, copy=True)
    out[..., list(SPECIAL_IDS)] -= MASK_VALUE
    return out


def _check_finite(arr: np.ndarray, where: str) -> None:
    if not np.isfinite(arr).all():
        bad = int((~np.isfinite(arr)).sum())
        raise NonFiniteError(f"{bad} non-finite values in {where}")


class PolicyNet:
    """Causal transformer policy; see :func:`param_shapes` for the layout."""

    def __init__(self, cfg: ModelConfig, params: dict[str, np.ndarray]):
        expected = dict(param_shapes(cfg))
        if list(params) != list(expected):
            raise ValueError("parameter names/order do not match the config")
        for name, arr in params.items():
            if arr.shape != expected[name]:
                raise ValueError(f"parameter {name} has shape {arr.shape}, expected {expected[name]}")
        self.cfg = cfg
        self.params = params

    @classmethod
    def create(cls, cfg: ModelConfig, rng: np.random.Generator) -> "PolicyNet":
        return cls(cfg, init_params(cfg, rng))

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def copy(self) -> "PolicyNet":
        return PolicyNet(self.cfg, {k: v.copy() for k, v in self.params.items()})

    # -- full-sequence pass ------------------------------------------------

    def forward(self, tokens: np.ndarray, keep: bool = False):
        """Per-position action logits ``(B, T, n_actions)`` for ``tokens (B, T)``."""
        P, cfg = self.params, self.cfg
        tokens = np.atleast_2d(np.asarray(tokens))
        B, T = tokens.shape
        if T > cfg.max_len:
            raise ValueError(f"sequence length {T} exceeds max_len {cfg.max_len}")
        if tokens.min() < 0 or tokens.max() >= cfg.vocab_size:
            raise ValueError("token id out of range")
        H = cfg.n_heads
        dh = cfg.d_model // H
        scale = 1.0 / math.sqrt(dh)
        causal = np.triu(np.ones((T, T), dtype=bool), k=1)
        x = P["tok_emb"][tokens] + P["pos_emb"][:T]
        caches = []
        for i in range(cfg.n_layers):
            p = f"h{i}."
            h, ln1 = _layernorm(x, P[p + "ln1_g"], P[p + "ln1_b"])
            qkv = h @ P[p + "w_qkv"] + P[p + "b_qkv"]
            q, k, v = (qkv[..., j * cfg.d_model:(j + 1) * cfg.d_model]
                       .reshape(B, T, H, dh).transpose(0, 2, 1, 3) for j in range(3))
            s = (q @ k.transpose(0, 1, 3, 2)) * scale
            s = np.where(causal, -np.inf, s)
            a = _softmax(s)
            o = (a @ v).transpose(0, 2, 1, 3).reshape(B, T, cfg.d_model)
            x = x + o @ P[p + "w_o"] + P[p + "b_o"]
            h2, ln2 = _layernorm(x, P[p + "ln2_g"], P[p + "ln2_b"])
            f = h2 @ P[p + "w_ff1"] + P[p + "b_ff1"]
            g, t = _gelu(f)
            x = x + g @ P[p + "w_ff2"] + P[p + "b_ff2"]
            if keep:
                caches.append((h, ln1, q, k, v, a, o, h2, ln2, f, g, t))
        hf, lnf = _layernorm(x, P["lnf_g"], P["lnf_b"])
        logits = hf @ P["w_out"] + P["b_out"]
        _check_finite(logits, "forward logits")
        if keep:
            return logits, (tokens, caches, hf, lnf)
        return logits

    def backward(self, dlogits: np.ndarray, cache) -> dict[str, np.ndarray]:
        P, cfg = self.params, self.cfg
        tokens, caches, hf, lnf = cache
        B, T = tokens.shape
        H = cfg.n_heads
        dh = cfg.d_model // H
        scale = 1.0 / math.sqrt(dh)
        grads = {}
        grads["w_out"] = np.einsum("btd,bta->da", hf, dlogits)
        grads["b_out"] = dlogits.sum(axis=(0, 1))
        dx, grads["lnf_g"], grads["lnf_b"] = _layernorm_back(dlogits @ P["w_out"].T, P["lnf_g"], lnf)
        for i in reversed(range(cfg.n_layers)):
            p = f"h{i}."
            h, ln1, q, k, v, a, o, h2, ln2, f, g, t = caches[i]
            # feed-forward sublayer
            grads[p + "w_ff2"] = np.einsum("btf,btd->fd", g, dx)
            grads[p + "b_ff2"] = dx.sum(axis=(0, 1))
            df = _gelu_back(dx @ P[p + "w_ff2"].T, f, t)
            grads[p + "w_ff1"] = np.einsum("btd,btf->df", h2, df)
            grads[p + "b_ff1"] = df.sum(axis=(0, 1))
            dh2, grads[p + "ln2_g"], grads[p + "ln2_b"] = _layernorm_back(df @ P[p + "w_ff1"].T, P[p + "ln2_g"], ln2)
            dx = dx + dh2
            # attention sublayer
            grads[p + "w_o"] = np.einsum("btd,bte->de", o, dx)
            grads[p + "b_o"] = dx.sum(axis=(0, 1))
            do = (dx @ P[p + "w_o"].T).reshape(B, T, H, dh).transpose(0, 2, 1, 3)
            da = do @ v.transpose(0, 1, 3, 2)
            dv = a.transpose(0, 1, 3, 2) @ do
            ds = a * (da - (da * a).sum(axis=-1, keepdims=True)) * scale
            dq = ds @ k
            dk = ds.transpose(0, 1, 3, 2) @ q
            dqkv = np.concatenate([m.transpose(0, 2, 1, 3).reshape(B, T, cfg.d_model)
                                   for m in (dq, dk, dv)], axis=-1)
            grads[p + "w_qkv"] = np.einsum("btd,bte->de", h, dqkv)
            grads[p + "b_qkv"] = dqkv.sum(axis=(0, 1))
            dh1, grads[p + "ln1_g"], grads[p + "ln1_b"] = _layernorm_back(dqkv @ P[p + "w_qkv"].T, P[p + "ln1_g"], ln1)
            dx = dx + dh1
        dtok = np.zeros_like(P["tok_emb"])
        np.add.at(dtok, tokens, dx)
        grads["tok_emb"] = dtok
        dpos = np.zeros_like(P["pos_emb"])
        dpos[:T] = dx.sum(axis=0)
        grads["pos_emb"] = dpos
        return {name: grads[name].astype(P[name].dtype, copy=False) for name in P}

    def loss_and_grad(self, tokens: np.ndarray, targets: np.ndarray, weights: np.ndarray,
                      thought_masked: bool = False, need_grad: bool = True):
        """Weighted negative log-likelihood ``-sum(w * log pi(target))`` and its gradient.

        ``weights`` is zero wherever no action is predicted.  ``thought_masked``
        (a bool, or a ``(B, T)`` bool array) masks the special-action logits
        first, as they were masked when the actions were sampled.
        """
        logits, cache = self.forward(tokens, keep=True)
        if isinstance(thought_masked, np.ndarray):
            logits = np.where(thought_masked[..., None], mask_thought(logits), logits)
        elif thought_masked:
            logits = mask_thought(logits)
        logp = log_softmax(logits.astype(np.float64))
        tgt = np.where(weights != 0, targets, 0)
        picked = np.take_along_axis(logp, tgt[..., None], axis=-1)[..., 0]
        loss = float(-(weights * picked).sum())
        _check_finite(np.asarray(loss), "loss")
        if not need_grad:
            return loss, None
        probs = np.exp(logp)
        dlogits = probs
        dlogits[np.arange(tokens.shape[0])[:, None], np.arange(tokens.shape[1])[None, :], tgt] -= 1.0
        dlogits *= weights[..., None]
        grads = self.backward(dlogits.astype(self.cfg.dtype), cache)
        return loss, grads

    # -- incremental decoding ----------------------------------------------

    def start_decode(self, batch: int) -> "DecodeCache":
        return DecodeCache(self, batch)


class DecodeCache:
    """Key/value cache for stepping a batch of sequences in lockstep."""

    def __init__(self, net: PolicyNet, batch: int):
        cfg = net.cfg
        self.net = net
        self.length = 0
        dh = cfg.d_model // cfg.n_heads
        shape = (cfg.n_layers, batch, cfg.n_heads, cfg.max_len, dh)
        self.k = np.zeros(shape, dtype=cfg.dtype)
        self.v = np.zeros(shape, dtype=cfg.dtype)

    def feed(self, tokens: np.ndarray) -> np.ndarray:
        """Append ``tokens (B, m)`` and return logits at the new positions ``(B, m, A)``."""
        net, cfg, P = self.net, self.net.cfg, self.net.params
        tokens = np.asarray(tokens)
        B, m = tokens.shape
        start, end = self.length, self.length + m
        if end > cfg.max_len:
            raise ValueError(f"sequence length {end} exceeds max_len {cfg.max_len}")
        H = cfg.n_heads
        dh = cfg.d_model // H
        scale = 1.0 / math.sqrt(dh)
        x = P["tok_emb"][tokens] + P["pos_emb"][start:end]
        key_pos = np.arange(end)
        blocked = key_pos[None, :] > (start + np.arange(m))[:, None]
        for i in range(cfg.n_layers):
            p = f"h{i}."
            h, _ = _layernorm(x, P[p + "ln1_g"], P[p + "ln1_b"])
            qkv = h @ P[p + "w_qkv"] + P[p + "b_qkv"]
            q, k, v = (qkv[..., j * cfg.d_model:(j + 1) * cfg.d_model]
                       .reshape(B, m, H, dh).transpose(0, 2, 1, 3) for j in range(3))
            self.k[i, :, :, start:end] = k
            self.v[i, :, :, start:end] = v
            s = (q @ self.k[i, :, :, :end].transpose(0, 1, 3, 2)) * scale
            s = np.where(blocked, -np.inf, s)
            a = _softmax(s)
            o = (a @ self.v[i, :, :, :end]).transpose(0, 2, 1, 3).reshape(B, m, cfg.d_model)
            x = x + o @ P[p + "w_o"] + P[p + "b_o"]
            h2, _ = _layernorm(x, P[p + "ln2_g"], P[p + "ln2_b"])
            g, _ = _gelu(h2 @ P[p + "w_ff1"] + P[p + "b_ff1"])
            x = x + g @ P[p + "w_ff2"] + P[p + "b_ff2"]
        hf, _ = _layernorm(x, P["lnf_g"], P["lnf_b"])
        logits = hf @ P["w_out"] + P["b_out"]
        _check_finite(logits, "decode logits")
        self.length = end
        return logits
