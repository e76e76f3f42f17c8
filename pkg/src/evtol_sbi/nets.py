"""Transformer building blocks shared by the two diffusion models."""

from __future__ import annotations

import math

import torch
from torch import nn


def sinusoidal_embedding(
    x: torch.Tensor, dim: int, max_period: float = 10_000.0
) -> torch.Tensor:
    """Classic transformer position features for a real-valued input."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(max_period)
        * torch.arange(half, dtype=x.dtype, device=x.device)
        / half
    )
    ang = x[..., None] * freqs
    emb = torch.cat([torch.cos(ang), torch.sin(ang)], dim=-1)
    if dim % 2:
        emb = torch.cat([emb, torch.zeros_like(emb[..., :1])], dim=-1)
    return emb


class GaussianFourierEmbedding(nn.Module):
    """Random-frequency time features, frozen at init."""

    def __init__(self, dim: int, scale: float = 16.0):
        super().__init__()
        if dim % 2:
            raise ValueError("Fourier embedding dimension must be even")
        self.register_buffer("freqs", torch.randn(dim // 2) * scale)

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        ang = 2.0 * math.pi * t[..., None] * self.freqs
        return torch.cat([torch.cos(ang), torch.sin(ang)], dim=-1)


def rotary_tables(
    n_positions: int, head_dim: int, dtype, device, base: float = 10_000.0
) -> tuple[torch.Tensor, torch.Tensor]:
    if head_dim % 2:
        raise ValueError("rotary embedding needs an even head dimension")
    half = head_dim // 2
    inv = base ** (-torch.arange(half, dtype=dtype, device=device) / half)
    ang = torch.arange(n_positions, dtype=dtype, device=device)[:, None] * inv
    return torch.cos(ang), torch.sin(ang)


def apply_rotary(
    q: torch.Tensor, cos: torch.Tensor, sin: torch.Tensor
) -> torch.Tensor:
    """Rotate (even, odd) feature pairs by the per-position angles.

    q has shape [..., T, heads, head_dim]; cos/sin have shape [T, head_dim/2].
    """
    q1 = q[..., 0::2]
    q2 = q[..., 1::2]
    c = cos[:, None, :]
    s = sin[:, None, :]
    out = torch.empty_like(q)
    out[..., 0::2] = q1 * c - q2 * s
    out[..., 1::2] = q1 * s + q2 * c
    return out


class RotarySelfAttention(nn.Module):
    def __init__(self, hidden: int, heads: int):
        super().__init__()
        if hidden % heads:
            raise ValueError("hidden size must divide evenly across heads")
        self.heads = heads
        self.head_dim = hidden // heads
        self.qkv = nn.Linear(hidden, 3 * hidden)
        self.out = nn.Linear(hidden, hidden)

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        b, t, _ = h.shape
        q, k, v = self.qkv(h).chunk(3, dim=-1)
        q = q.view(b, t, self.heads, self.head_dim)
        k = k.view(b, t, self.heads, self.head_dim)
        v = v.view(b, t, self.heads, self.head_dim)
        cos, sin = rotary_tables(t, self.head_dim, h.dtype, h.device)
        q = apply_rotary(q, cos, sin)
        k = apply_rotary(k, cos, sin)
        att = torch.einsum("bqhd,bkhd->bhqk", q, k) / math.sqrt(self.head_dim)
        att = torch.softmax(att, dim=-1)
        o = torch.einsum("bhqk,bkhd->bqhd", att, v).reshape(b, t, -1)
        return self.out(o)


def _modulate(h: torch.Tensor, shift: torch.Tensor, scale: torch.Tensor):
    return h * (1.0 + scale[:, None, :]) + shift[:, None, :]


class AdaLNBlock(nn.Module):
    """Attention + MLP block modulated by a conditioning vector.

    The modulation projection is zero-initialized so every block starts as
    the identity map.
    """

    def __init__(self, hidden: int, heads: int, widening: int = 4):
        super().__init__()
        self.ln1 = nn.LayerNorm(hidden, elementwise_affine=False)
        self.ln2 = nn.LayerNorm(hidden, elementwise_affine=False)
        self.attn = RotarySelfAttention(hidden, heads)
        self.mlp = nn.Sequential(
            nn.Linear(hidden, widening * hidden),
            nn.GELU(),
            nn.Linear(widening * hidden, hidden),
        )
        self.mod = nn.Linear(hidden, 6 * hidden)
        nn.init.zeros_(self.mod.weight)
        nn.init.zeros_(self.mod.bias)

    def forward(self, h: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        mods = self.mod(torch.nn.functional.silu(cond)).chunk(6, dim=-1)
        shift_a, scale_a, gate_a, shift_m, scale_m, gate_m = mods
        h = h + gate_a[:, None, :] * self.attn(
            _modulate(self.ln1(h), shift_a, scale_a)
        )
        h = h + gate_m[:, None, :] * self.mlp(
            _modulate(self.ln2(h), shift_m, scale_m)
        )
        return h


class SmallKeyAttention(nn.Module):
    """Multi-head attention with a narrow per-head key/value width and an
    explicit boolean edge mask."""

    def __init__(self, dim: int, heads: int, key_size: int):
        super().__init__()
        self.heads = heads
        self.key_size = key_size
        self.q = nn.Linear(dim, heads * key_size)
        self.k = nn.Linear(dim, heads * key_size)
        self.v = nn.Linear(dim, heads * key_size)
        self.out = nn.Linear(heads * key_size, dim)

    def forward(self, h: torch.Tensor, allowed: torch.Tensor) -> torch.Tensor:
        b, t, _ = h.shape
        q = self.q(h).view(b, t, self.heads, self.key_size)
        k = self.k(h).view(b, t, self.heads, self.key_size)
        v = self.v(h).view(b, t, self.heads, self.key_size)
        att = torch.einsum("bqhd,bkhd->bhqk", q, k) / math.sqrt(self.key_size)
        att = att.masked_fill(~allowed[:, None, :, :], float("-inf"))
        att = torch.softmax(att, dim=-1)
        o = torch.einsum("bhqk,bkhd->bqhd", att, v).reshape(b, t, -1)
        return self.out(o)
