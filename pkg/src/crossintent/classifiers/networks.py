"""Sequence classifier networks (float64) and their analytic parameter counts.

All three take ``x`` of shape (batch, slots, features) plus a boolean presence
mask and return logits of shape (batch, heads, 2) ordered
(not_crossing, crossing).
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import torch
from torch import nn

ARCHITECTURES = ("FFNN", "GRU", "TransformerEncoder")
DTYPE = torch.float64


@dataclass(frozen=True)
class ClassifierConfig:
    architecture: str = "GRU"
    n_layers: int = 2
    n_hidden: int = 64
    n_heads: int = 4
    input_dim: int = 50
    context_slots: int = 8
    horizons: tuple = (1.5,)
    seed: int = 0
    mask_skipping: bool = True

    def __post_init__(self):
        object.__setattr__(self, "horizons", tuple(float(h) for h in self.horizons))
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"architecture must be one of {ARCHITECTURES}")
        if not self.horizons:
            raise ValueError("at least one prediction head is required")
        if self.n_layers < 1 or self.n_hidden < 1 or self.context_slots < 1 or self.input_dim < 1:
            raise ValueError("layer, width, slot and input sizes must be positive")
        if self.architecture == "TransformerEncoder" and self.n_hidden % self.n_heads:
            raise ValueError("n_hidden must be divisible by n_heads")

    @property
    def n_outputs(self) -> int:
        return len(self.horizons)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["horizons"] = list(self.horizons)
        return d


def count_parameters(cfg: ClassifierConfig) -> int:
    """Closed-form parameter count of the network ``build_network(cfg)`` creates."""
    h, x, L, heads = cfg.n_hidden, cfg.input_dim, cfg.n_layers, cfg.n_outputs
    if cfg.architecture == "FFNN":
        # n_layers affine maps in total; the last one is the per-head output layer
        dims = [x * cfg.context_slots] + [h] * (L - 1)
        body = sum(a * b + b for a, b in zip(dims, dims[1:]))
        return body + heads * (dims[-1] * 2 + 2)
    if cfg.architecture == "GRU":
        first = 3 * (h * (x + h) + 2 * h)
        rest = 3 * (h * 2 * h + 2 * h)
        return first + (L - 1) * rest + heads * (2 * h + 2)
    d = f = h
    per_layer = 4 * (d * d + d) + 2 * (2 * d) + (d * f + f) + (f * d + d)
    return (x * d + d) + L * per_layer + heads * (2 * d + 2)


class FFNN(nn.Module):
    def __init__(self, cfg: ClassifierConfig):
        super().__init__()
        dims = [cfg.input_dim * cfg.context_slots] + [cfg.n_hidden] * (cfg.n_layers - 1)
        self.hidden = nn.ModuleList(nn.Linear(a, b, dtype=DTYPE) for a, b in zip(dims, dims[1:]))
        self.heads = nn.ModuleList(nn.Linear(dims[-1], 2, dtype=DTYPE) for _ in range(cfg.n_outputs))

    def forward(self, x, mask=None):
        z = x.reshape(x.shape[0], -1)
        for layer in self.hidden:
            z = torch.relu(layer(z))
        return torch.stack([head(z) for head in self.heads], dim=1)


class GRULayer(nn.Module):
    """One gated recurrent layer (reset, update, candidate gates)."""

    def __init__(self, input_size: int, hidden_size: int):
        super().__init__()
        self.hidden_size = hidden_size
        self.weight_ih = nn.Parameter(torch.empty(3 * hidden_size, input_size, dtype=DTYPE))
        self.weight_hh = nn.Parameter(torch.empty(3 * hidden_size, hidden_size, dtype=DTYPE))
        self.bias_ih = nn.Parameter(torch.empty(3 * hidden_size, dtype=DTYPE))
        self.bias_hh = nn.Parameter(torch.empty(3 * hidden_size, dtype=DTYPE))

    def forward(self, x, mask=None):
        B, T, _ = x.shape
        H = self.hidden_size
        gi = torch.addmm(self.bias_ih, x.reshape(B * T, -1), self.weight_ih.T).reshape(B, T, 3 * H)
        w_hh = self.weight_hh.T
        h = x.new_zeros(B, H)
        outs = []
        for t in range(T):
            gh = torch.addmm(self.bias_hh, h, w_hh)
            # r and z share one sigmoid; h' = (1 - z) n + z h written as a lerp
            rz = torch.sigmoid(gi[:, t, :2 * H] + gh[:, :2 * H])
            r, z = rz[:, :H], rz[:, H:]
            n = torch.tanh(torch.addcmul(gi[:, t, 2 * H:], r, gh[:, 2 * H:]))
            h_new = torch.lerp(n, h, z)
            if mask is not None:
                h_new = torch.where(mask[:, t, None], h_new, h)
            h = h_new
            outs.append(h)
        return torch.stack(outs, dim=1), h


class GRUClassifier(nn.Module):
    def __init__(self, cfg: ClassifierConfig):
        super().__init__()
        sizes = [cfg.input_dim] + [cfg.n_hidden] * cfg.n_layers
        self.layers = nn.ModuleList(GRULayer(a, b) for a, b in zip(sizes, sizes[1:]))
        self.heads = nn.ModuleList(nn.Linear(cfg.n_hidden, 2, dtype=DTYPE) for _ in range(cfg.n_outputs))
        self.mask_skipping = cfg.mask_skipping

    def forward(self, x, mask=None):
        mask = mask if self.mask_skipping else None
        seq = x
        for layer in self.layers:
            seq, last = layer(seq, mask)
        return torch.stack([head(last) for head in self.heads], dim=1)


def sinusoidal_encoding(n_pos: int, d: int) -> torch.Tensor:
    pos = torch.arange(n_pos, dtype=DTYPE).unsqueeze(1)
    i = torch.arange(0, d, 2, dtype=DTYPE)
    angle = pos / torch.pow(torch.tensor(10000.0, dtype=DTYPE), i / d)
    pe = torch.zeros(n_pos, d, dtype=DTYPE)
    pe[:, 0::2] = torch.sin(angle)
    pe[:, 1::2] = torch.cos(angle[:, : d // 2])
    return pe


class SelfAttention(nn.Module):
    def __init__(self, d: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.qkv = nn.Linear(d, 3 * d, dtype=DTYPE)
        self.out = nn.Linear(d, d, dtype=DTYPE)

    def forward(self, x, key_bias):
        B, T, d = x.shape
        hd = d // self.n_heads
        q, k, v = self.qkv(x).split(d, dim=2)
        split = lambda a: a.reshape(B, T, self.n_heads, hd).transpose(1, 2)
        q, k, v = split(q), split(k), split(v)
        scores = q @ k.transpose(-1, -2) / math.sqrt(hd) + key_bias
        att = torch.softmax(scores, dim=-1)
        y = (att @ v).transpose(1, 2).reshape(B, T, d)
        return self.out(y)


class EncoderLayer(nn.Module):
    """Post-norm encoder block: self-attention then a ReLU feed-forward."""

    def __init__(self, d: int, n_heads: int, d_ff: int):
        super().__init__()
        self.attn = SelfAttention(d, n_heads)
        self.norm1 = nn.LayerNorm(d, dtype=DTYPE)
        self.ff1 = nn.Linear(d, d_ff, dtype=DTYPE)
        self.ff2 = nn.Linear(d_ff, d, dtype=DTYPE)
        self.norm2 = nn.LayerNorm(d, dtype=DTYPE)

    def forward(self, x, key_bias):
        x = self.norm1(x + self.attn(x, key_bias))
        return self.norm2(x + self.ff2(torch.relu(self.ff1(x))))


class TransformerClassifier(nn.Module):
    def __init__(self, cfg: ClassifierConfig):
        super().__init__()
        d = cfg.n_hidden
        self.embed = nn.Linear(cfg.input_dim, d, dtype=DTYPE)
        self.register_buffer("pe", sinusoidal_encoding(cfg.context_slots, d), persistent=False)
        self.layers = nn.ModuleList(EncoderLayer(d, cfg.n_heads, d) for _ in range(cfg.n_layers))
        self.heads = nn.ModuleList(nn.Linear(d, 2, dtype=DTYPE) for _ in range(cfg.n_outputs))

    def forward(self, x, mask=None):
        B, T, _ = x.shape
        if mask is None:
            mask = torch.ones(B, T, dtype=torch.bool)
        # windows with no present slot attend everywhere
        mask = mask | ~mask.any(dim=1, keepdim=True)
        key_bias = torch.zeros(B, 1, 1, T, dtype=DTYPE).masked_fill(~mask[:, None, None, :], -math.inf)
        z = self.embed(x) + self.pe[:T]
        for layer in self.layers:
            z = layer(z, key_bias)
        w = mask.to(DTYPE).unsqueeze(2)
        pooled = (z * w).sum(dim=1) / w.sum(dim=1)
        return torch.stack([head(pooled) for head in self.heads], dim=1)


def build_network(cfg: ClassifierConfig) -> nn.Module:
    """Network for ``cfg`` with seeded uniform fan-in initialization."""
    net = {"FFNN": FFNN, "GRU": GRUClassifier, "TransformerEncoder": TransformerClassifier}[cfg.architecture](cfg)
    gen = torch.Generator().manual_seed(int(cfg.seed))
    with torch.no_grad():
        for module in net.modules():
            if isinstance(module, nn.LayerNorm):
                module.weight.fill_(1.0)
                module.bias.zero_()
            elif isinstance(module, nn.Linear):
                bound = 1.0 / math.sqrt(module.in_features)
                module.weight.copy_(torch.rand(module.weight.shape, generator=gen, dtype=DTYPE) * 2 * bound - bound)
                module.bias.copy_(torch.rand(module.bias.shape, generator=gen, dtype=DTYPE) * 2 * bound - bound)
            elif isinstance(module, GRULayer):
                bound = 1.0 / math.sqrt(module.hidden_size)
                for p in (module.weight_ih, module.weight_hh, module.bias_ih, module.bias_hh):
                    p.copy_(torch.rand(p.shape, generator=gen, dtype=DTYPE) * 2 * bound - bound)
    return net


def parameter_segments(net: nn.Module) -> list[tuple[str, tuple]]:
    return [(name, tuple(p.shape)) for name, p in net.named_parameters()]


def flat_parameters(net: nn.Module) -> torch.Tensor:
    return torch.cat([p.detach().reshape(-1) for p in net.parameters()])


def load_flat_parameters(net: nn.Module, flat) -> None:
    flat = torch.as_tensor(flat, dtype=DTYPE)
    total = sum(p.numel() for p in net.parameters())
    if flat.numel() != total:
        raise ValueError(f"expected {total} parameters, got {flat.numel()}")
    offset = 0
    with torch.no_grad():
        for p in net.parameters():
            p.copy_(flat[offset:offset + p.numel()].reshape(p.shape))
            offset += p.numel()
