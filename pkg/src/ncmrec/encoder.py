"""Self-attention encoder mapping an interaction history to a preference state."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import torch
from torch import nn

DTYPE = torch.float64


class EncoderError(ValueError):
    pass


@dataclass(frozen=True)
class HistoryPrefix:
    """Items (0-based catalog ids) with binary feedback flags, oldest first."""

    items: tuple[int, ...] = ()
    feedback: tuple[int, ...] = ()

    def __post_init__(self):
        if len(self.items) != len(self.feedback):
            raise EncoderError("items and feedback flags must align")

    def __len__(self):
        return len(self.items)

    def window(self, w: int) -> "HistoryPrefix":
        if len(self.items) <= w:
            return self
        return HistoryPrefix(self.items[-w:], self.feedback[-w:])

    def extend(self, item: int, flag: int) -> "HistoryPrefix":
        return HistoryPrefix(self.items + (int(item),), self.feedback + (int(flag),))


def pack_prefixes(prefixes: Sequence[HistoryPrefix], window: int):
    """Id/flag tensors right-padded to the full window, plus true lengths.

    Padding sits after the real tokens, so the causal mask already hides it
    from every real row. A fixed width keeps every matmul the same shape,
    so a row never depends on how long the other sequences are.
    """
    prefixes = [p.window(window) for p in prefixes]
    n = max(1, window)
    items = torch.zeros(len(prefixes), n, dtype=torch.long)
    flags = torch.zeros(len(prefixes), n, dtype=torch.long)
    lengths = torch.zeros(len(prefixes), dtype=torch.long)
    for b, p in enumerate(prefixes):
        if len(p) == 0:
            continue
        # row 0 of the item table is the start token
        items[b, : len(p)] = torch.as_tensor(p.items) + 1
        flags[b, : len(p)] = torch.as_tensor(p.feedback)
        lengths[b] = len(p)
    return items, flags, lengths


class AttentionBlock(nn.Module):
    """Masked multi-head self-attention followed by a point-wise ReLU FFN.

    No residual connections or normalization layers.
    """

    def __init__(self, d: int, heads: int, generator: torch.Generator | None = None):
        super().__init__()
        if d % heads:
            raise EncoderError(f"width {d} not divisible by {heads} heads")
        self.d, self.heads = d, heads
        dh = d // heads
        self.w_q = nn.Parameter(torch.empty(heads, d, dh, dtype=DTYPE))
        self.w_k = nn.Parameter(torch.empty(heads, d, dh, dtype=DTYPE))
        self.w_v = nn.Parameter(torch.empty(heads, d, dh, dtype=DTYPE))
        self.w_o = nn.Parameter(torch.empty(d, d, dtype=DTYPE))
        self.w_f1 = nn.Parameter(torch.empty(d, d, dtype=DTYPE))
        self.b_f1 = nn.Parameter(torch.zeros(d, dtype=DTYPE))
        self.w_f2 = nn.Parameter(torch.empty(d, d, dtype=DTYPE))
        self.b_f2 = nn.Parameter(torch.zeros(d, dtype=DTYPE))
        bound = 1.0 / math.sqrt(d)
        with torch.no_grad():
            for w in (self.w_q, self.w_k, self.w_v, self.w_o, self.w_f1, self.w_f2):
                w.uniform_(-bound, bound, generator=generator)

    def attention_weights(self, x: torch.Tensor) -> torch.Tensor:
        """Per-head causal attention weights, shape ``(batch, heads, n, n)``."""
        q = torch.einsum("bnd,hde->bhne", x, self.w_q)
        k = torch.einsum("bnd,hde->bhne", x, self.w_k)
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.d)
        n = x.shape[1]
        future = torch.triu(torch.ones(n, n, dtype=torch.bool), diagonal=1)
        scores = scores.masked_fill(future, float("-inf"))
        return torch.softmax(scores, dim=-1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        squeeze = x.dim() == 2
        if squeeze:
            x = x.unsqueeze(0)
        att = self.attention_weights(x)
        v = torch.einsum("bnd,hde->bhne", x, self.w_v)
        heads = att @ v  # (b, h, n, dh)
        h = heads.permute(0, 2, 1, 3).reshape(x.shape[0], x.shape[1], self.d) @ self.w_o
        out = torch.relu(h @ self.w_f1 + self.b_f1) @ self.w_f2 + self.b_f2
        if not torch.isfinite(out).all():
            raise FloatingPointError("non-finite activation in attention block")
        return out.squeeze(0) if squeeze else out


class StateEncoder(nn.Module):
    """Item + feedback + position embeddings fed through stacked attention blocks.

    Catalog item ``i`` lives in row ``i + 1`` of ``item_embeddings``; row 0 is
    the start token used for the empty history.
    """

    def __init__(
        self,
        n_items: int,
        d: int = 50,
        heads: int = 1,
        blocks: int = 1,
        window: int = 10,
        init_std: float = 0.02,
        seed: int = 0,
    ):
        super().__init__()
        if d % heads:
            raise EncoderError(f"width {d} not divisible by {heads} heads")
        g = torch.Generator().manual_seed(seed)
        self.n_items, self.d, self.window = n_items, d, window
        self.item_embeddings = nn.Parameter(torch.randn(n_items + 1, d, generator=g, dtype=DTYPE) * init_std)
        self.feedback_embeddings = nn.Parameter(torch.randn(2, d, generator=g, dtype=DTYPE) * init_std)
        self.position_embeddings = nn.Parameter(torch.randn(window, d, generator=g, dtype=DTYPE) * init_std)
        self.blocks = nn.ModuleList(AttentionBlock(d, heads, g) for _ in range(blocks))

    def action_embeddings(self) -> torch.Tensor:
        """Catalog rows of the item table, shared with the agent."""
        return self.item_embeddings[1:]

    def embed(self, items: torch.Tensor, flags: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        if items.numel() and (items.max() > self.n_items or items.min() < 0):
            raise EncoderError("item id out of catalog range")
        n = items.shape[1]
        if n > self.window:
            raise EncoderError(f"prefix of length {n} exceeds window {self.window}")
        e = self.item_embeddings[items]
        # the start token carries no feedback offset
        real = (torch.arange(n)[None, :] < lengths[:, None]).to(DTYPE).unsqueeze(-1)
        e = e + real * self.feedback_embeddings[flags]
        return e + self.position_embeddings[:n]

    def embed_sequence(self, prefix: HistoryPrefix) -> torch.Tensor:
        """``E + P`` for one prefix, shape ``(max(n, 1), d)``."""
        items, flags, lengths = pack_prefixes([prefix], self.window)
        return self.embed(items, flags, lengths)[0]

    def encode_all(self, items, flags, lengths) -> torch.Tensor:
        """Per-position encodings after the last block, ``(batch, n, d)``."""
        s = self.embed(items, flags, lengths)
        for block in self.blocks:
            s = block(s)
        return s

    def forward(self, items, flags, lengths) -> torch.Tensor:
        s = self.encode_all(items, flags, lengths)
        last = (lengths - 1).clamp(min=0)
        return s[torch.arange(s.shape[0]), last]

    def encode(self, prefixes: Sequence[HistoryPrefix]) -> torch.Tensor:
        return self(*pack_prefixes(prefixes, self.window))

    def encode_state(self, prefix: HistoryPrefix) -> torch.Tensor:
        return self.encode([prefix])[0]
