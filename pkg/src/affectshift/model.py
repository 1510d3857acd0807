"""Emotion-embedding network.

Two scalar MLPs turn valence and arousal into context tokens ``e_v`` and
``e_a``. A stack of pre-norm transformer blocks, each with self-attention
(no causal mask), cross-attention to ``e_v``, cross-attention to ``e_a`` and a
feed-forward sublayer, maps a neutral prompt feature to a residual that is
added back onto the input::

    h_0 = P_in(f_n) + PE
    h_i = block_i(h_{i-1}, e_v, e_a)
    f_hat = P_out(LN(h_N)) + f_n
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import NamedTuple

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigMismatch, NotFinite, ShapeMismatch, ValidationError
from .va import VAPoint

INIT_STD = 0.02


@dataclass(frozen=True)
class EITConfig:
    num_blocks: int = 12
    d_model: int = 768
    d_prompt: int = 2048
    seq_len: int = 77
    emo_tokens: int = 1
    num_heads: int = 12
    d_ffn: int = 3072
    mlp_hidden: int = 256
    ln_epsilon: float = 1e-5

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "ln_epsilon":
                if not (isinstance(value, (int, float)) and value > 0):
                    raise ValidationError(f"must be a positive real, got {value!r}", field=f.name)
            elif isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise ValidationError(f"must be a positive integer, got {value!r}", field=f.name)
        if self.d_model % self.num_heads:
            raise ValidationError(
                f"d_model={self.d_model} not divisible by num_heads={self.num_heads}", field="d_model"
            )

    @classmethod
    def tiny(cls, **overrides) -> "EITConfig":
        """Desk-scale geometry used by tests and the toy pipeline."""
        base = dict(
            num_blocks=2, d_model=8, d_prompt=16, seq_len=4, emo_tokens=1,
            num_heads=2, d_ffn=32, mlp_hidden=16,
        )
        base.update(overrides)
        return cls(**base)

    @classmethod
    def from_dict(cls, data: dict) -> "EITConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)


class EmotionFeatures(NamedTuple):
    e_v: torch.Tensor  # (..., emo_tokens, d_model)
    e_a: torch.Tensor


class ScalarMLP(nn.Module):
    """Maps one scalar to ``tokens`` context vectors."""

    def __init__(self, hidden: int, d_model: int, tokens: int):
        super().__init__()
        self.tokens = tokens
        self.d_model = d_model
        self.fc1 = nn.Linear(1, hidden)
        self.fc2 = nn.Linear(hidden, d_model * tokens)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = self.fc2(F.gelu(self.fc1(x.unsqueeze(-1))))
        return out.reshape(*x.shape, self.tokens, self.d_model)


class VAEncoder(nn.Module):
    def __init__(self, config: EITConfig):
        super().__init__()
        self.valence = ScalarMLP(config.mlp_hidden, config.d_model, config.emo_tokens)
        self.arousal = ScalarMLP(config.mlp_hidden, config.d_model, config.emo_tokens)

    def forward(self, valence: torch.Tensor, arousal: torch.Tensor) -> EmotionFeatures:
        return EmotionFeatures(self.valence(valence), self.arousal(arousal))


class Attention(nn.Module):
    """Multi-head scaled dot-product attention with separate q/k/v/out maps."""

    def __init__(self, d_model: int, num_heads: int):
        super().__init__()
        self.num_heads = num_heads
        self.head_dim = d_model // num_heads
        self.q = nn.Linear(d_model, d_model)
        self.k = nn.Linear(d_model, d_model)
        self.v = nn.Linear(d_model, d_model)
        self.out = nn.Linear(d_model, d_model)

    def _split(self, x):
        b, t, _ = x.shape
        return x.view(b, t, self.num_heads, self.head_dim).transpose(1, 2)

    def forward(self, x, context, key_mask=None, causal=False):
        # x: (B, T, D); context: (B, S, D); key_mask: (B, S) True = attend
        q, k, v = self._split(self.q(x)), self._split(self.k(context)), self._split(self.v(context))
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        allowed = None
        if key_mask is not None:
            allowed = key_mask[:, None, None, :]
        if causal:
            t, s = scores.shape[-2:]
            tri = torch.ones(t, s, dtype=torch.bool, device=x.device).tril()
            allowed = tri if allowed is None else allowed & tri
        if allowed is not None:
            scores = scores.masked_fill(~allowed, float("-inf"))
        attn = torch.softmax(scores, dim=-1)
        y = (attn @ v).transpose(1, 2).reshape(x.shape[0], x.shape[1], -1)
        return self.out(y)


class EmotionInjectionBlock(nn.Module):
    def __init__(self, config: EITConfig):
        super().__init__()
        d, eps = config.d_model, config.ln_epsilon
        self.ln_self = nn.LayerNorm(d, eps=eps)
        self.self_attn = Attention(d, config.num_heads)
        self.ln_valence = nn.LayerNorm(d, eps=eps)
        self.cross_valence = Attention(d, config.num_heads)
        self.ln_arousal = nn.LayerNorm(d, eps=eps)
        self.cross_arousal = Attention(d, config.num_heads)
        self.ln_ffn = nn.LayerNorm(d, eps=eps)
        self.ffn_in = nn.Linear(d, config.d_ffn)
        self.ffn_out = nn.Linear(config.d_ffn, d)

    def forward(self, h, e: EmotionFeatures, key_mask=None, causal=False):
        x = self.ln_self(h)
        h = self.self_attn(x, x, key_mask, causal) + h
        h = self.cross_valence(self.ln_valence(h), e.e_v) + h
        h = self.cross_arousal(self.ln_arousal(h), e.e_a) + h
        h = self.ffn_out(F.gelu(self.ffn_in(self.ln_ffn(h)))) + h
        return h


class EmotionInjectionTransformer(nn.Module):
    def __init__(self, config: EITConfig):
        super().__init__()
        self.config = config
        self.va_encoder = VAEncoder(config)
        self.p_in = nn.Linear(config.d_prompt, config.d_model)
        self.pos_emb = nn.Parameter(torch.zeros(config.seq_len, config.d_model))
        self.blocks = nn.ModuleList(EmotionInjectionBlock(config) for _ in range(config.num_blocks))
        self.ln_out = nn.LayerNorm(config.d_model, eps=config.ln_epsilon)
        self.p_out = nn.Linear(config.d_model, config.d_prompt)

    def forward(self, f_n, valence, arousal, key_mask=None, causal=False):
        """Batched forward.

        f_n: (B, seq_len, d_prompt); valence, arousal: (B,);
        key_mask: optional (B, seq_len) bool, False at padded positions.
        """
        if f_n.dim() != 3 or f_n.shape[1:] != (self.config.seq_len, self.config.d_prompt):
            raise ShapeMismatch(
                f"expected (B, {self.config.seq_len}, {self.config.d_prompt}), got {tuple(f_n.shape)}"
            )
        e = self.va_encoder(valence, arousal)
        h = self.p_in(f_n) + self.pos_emb
        for block in self.blocks:
            h = block(h, e, key_mask, causal)
        return self.p_out(self.ln_out(h)) + f_n


def init_params(model: EmotionInjectionTransformer, seed: int = 0) -> EmotionInjectionTransformer:
    """Truncated-normal weights, zero biases, unit norms, zero PE and P_out."""
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, mod in model.named_modules():
            if isinstance(mod, nn.Linear):
                nn.init.trunc_normal_(mod.weight, std=INIT_STD, a=-2 * INIT_STD, b=2 * INIT_STD, generator=gen)
                mod.bias.zero_()
            elif isinstance(mod, nn.LayerNorm):
                mod.weight.fill_(1.0)
                mod.bias.zero_()
        model.pos_emb.zero_()
        model.p_out.weight.zero_()
        model.p_out.bias.zero_()
    return model


def build_model(config: EITConfig, seed: int = 0, dtype=torch.float32) -> EmotionInjectionTransformer:
    return init_params(EmotionInjectionTransformer(config), seed).to(dtype)


def randomize_params(model: EmotionInjectionTransformer, seed: int, std: float = 0.3) -> EmotionInjectionTransformer:
    """Fill every parameter with N(0, std^2) noise. For tests and diagnostics."""
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in model.parameters():
            noise = torch.randn(p.shape, generator=gen, dtype=torch.float64) * std
            p.copy_(noise.to(p.dtype))
    return model


def parameter_count(config: EITConfig) -> int:
    d, dp, hid, ffn = config.d_model, config.d_prompt, config.mlp_hidden, config.d_ffn
    encoder = 2 * ((hid + hid) + (hid * d * config.emo_tokens + d * config.emo_tokens))
    attn = 4 * (d * d + d)
    block = 3 * attn + 4 * 2 * d + (d * ffn + ffn) + (ffn * d + d)
    head = 2 * d + d * dp + dp
    return encoder + (dp * d + d) + config.seq_len * d + config.num_blocks * block + head


def _scalar(model, value: float) -> torch.Tensor:
    dtype = next(model.parameters()).dtype
    return torch.tensor([value], dtype=dtype)


def encode_va(model: EmotionInjectionTransformer, p: VAPoint) -> EmotionFeatures:
    """Context tokens for one V-A point, each of shape (emo_tokens, d_model)."""
    e = model.va_encoder(_scalar(model, p.valence), _scalar(model, p.arousal))
    return EmotionFeatures(e.e_v[0], e.e_a[0])


def eib_forward(block: EmotionInjectionBlock, h_prev: torch.Tensor, e: EmotionFeatures, causal=False) -> torch.Tensor:
    """One injection block on an unbatched (T, d_model) hidden state."""
    d = block.ln_self.normalized_shape[0]
    if h_prev.dim() != 2 or h_prev.shape[1] != d:
        raise ShapeMismatch(f"hidden state must be (T, {d}), got {tuple(h_prev.shape)}")
    if e.e_v.shape != e.e_a.shape or e.e_v.shape[-1] != d:
        raise ShapeMismatch(f"bad emotion feature shapes {tuple(e.e_v.shape)}, {tuple(e.e_a.shape)}")
    out = block(h_prev[None], EmotionFeatures(e.e_v[None], e.e_a[None]), causal=causal)
    return out[0]


def pad_prompt(f_n: torch.Tensor, seq_len: int) -> tuple[torch.Tensor, torch.Tensor]:
    """Right-pad a (T, D) feature with zero rows to ``seq_len``; return it with a validity mask."""
    t = f_n.shape[0]
    if t < 1 or t > seq_len:
        raise ShapeMismatch(f"prompt length {t} outside [1, {seq_len}]")
    mask = torch.zeros(seq_len, dtype=torch.bool)
    mask[:t] = True
    if t == seq_len:
        return f_n, mask
    pad = torch.zeros(seq_len - t, f_n.shape[1], dtype=f_n.dtype)
    return torch.cat([f_n, pad]), mask


def eit_forward(model: EmotionInjectionTransformer, f_n: torch.Tensor, p: VAPoint, causal=False) -> torch.Tensor:
    """Emotional prompt feature for one unbatched (T, d_prompt) neutral feature."""
    cfg = model.config
    if f_n.dim() != 2 or f_n.shape[1] != cfg.d_prompt:
        raise ShapeMismatch(f"prompt feature must be (T, {cfg.d_prompt}), got {tuple(f_n.shape)}")
    t = f_n.shape[0]
    padded, mask = pad_prompt(f_n, cfg.seq_len)
    key_mask = None if mask.all() else mask[None]
    out = model(padded[None], _scalar(model, p.valence), _scalar(model, p.arousal), key_mask, causal)[0, :t]
    if not torch.isfinite(out).all():
        raise NotFinite("eit_forward output")
    return out


def check_config(expected: EITConfig, got: EITConfig) -> None:
    if expected != got:
        diffs = [
            f"{k}: expected {v!r}, checkpoint has {getattr(got, k)!r}"
            for k, v in expected.to_dict().items()
            if getattr(got, k) != v
        ]
        raise ConfigMismatch("; ".join(diffs))
