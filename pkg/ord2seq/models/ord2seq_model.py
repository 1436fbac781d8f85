"""
Ord2Seq model: feature encoder, label embedding, attention decoder with
per-step output heads, teacher-forced training loss and greedy decoding.

Default architecture: MLP encoder -> 4 feature tokens of width 64 ->
2 post-LN decoder layers (causal self-attention, cross-attention over the
feature tokens, GELU feed-forward) -> one linear head per tree step.
"""

import math
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from pydantic import BaseModel, Field, model_validator

from models.losses import CLAMP_EPS, LossReport, sequence_bce
from models.masked_decision import (
    DEFAULT_ALPHA,
    StepOutput,
    check_alpha,
    decide_batch,
    steps_from_arrays,
)
from utils.dichotomic_tree import START_TOKEN, DichotomicTree
from utils.errors import ConfigError, InvalidPathError
from utils.numerics import DTYPE, matmul, mul, reshape, sigmoid, softmax, transpose


class ModelConfig(BaseModel):
    """Architecture hyper-parameters shared by Ord2Seq and the baselines."""

    feature_dim: int = Field(8, ge=1)
    width: int = Field(64, ge=1)
    layers: int = Field(2, ge=1)
    heads: int = Field(4, ge=1)
    ff_width: int = Field(128, ge=1)
    feature_tokens: int = Field(4, ge=1)
    encoder_hidden: int = Field(256, ge=1)
    shared_head: bool = False

    @model_validator(mode="after")
    def _heads_divide_width(self):
        if self.width % self.heads != 0:
            raise ValueError(f"width {self.width} is not divisible by heads {self.heads}")
        return self


def initialize_weights(module: nn.Module, width: int) -> None:
    """Xavier-uniform linear weights with zero bias; label rows scaled to the model width."""
    for m in module.modules():
        if isinstance(m, nn.Linear):
            nn.init.xavier_uniform_(m.weight)
            if m.bias is not None:
                nn.init.constant_(m.bias, 0)
        elif isinstance(m, nn.Embedding):
            nn.init.normal_(m.weight, std=width ** -0.5)


class FeatureEncoder(nn.Module):
    """Two-layer MLP: feature vector -> (feature_tokens, width) token set."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.tokens = config.feature_tokens
        self.width = config.width
        self.hidden = nn.Linear(config.feature_dim, config.encoder_hidden)
        self.output = nn.Linear(config.encoder_hidden, config.feature_tokens * config.width)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = F.gelu(self.hidden(x))
        return reshape(self.output(h), (x.shape[0], self.tokens, self.width))


class MultiHeadAttention(nn.Module):
    def __init__(self, width: int, heads: int):
        super().__init__()
        self.heads = heads
        self.head_dim = width // heads
        self.w_q = nn.Linear(width, width)
        self.w_k = nn.Linear(width, width)
        self.w_v = nn.Linear(width, width)
        self.w_o = nn.Linear(width, width)

    def _split(self, t: torch.Tensor) -> torch.Tensor:
        b, length, _ = t.shape
        return transpose(reshape(t, (b, length, self.heads, self.head_dim)), 1, 2)

    def forward(self, query: torch.Tensor, key_value: torch.Tensor, causal: bool = False) -> torch.Tensor:
        b, length, width = query.shape
        q = self._split(self.w_q(query))
        k = self._split(self.w_k(key_value))
        v = self._split(self.w_v(key_value))

        scores = matmul(q, transpose(k)) / math.sqrt(self.head_dim)
        if causal:
            future = torch.triu(
                torch.ones(length, key_value.shape[1], dtype=torch.bool, device=query.device),
                diagonal=1,
            )
            scores = scores.masked_fill(future, float("-inf"))
        attn = softmax(scores, dim=-1)
        out = transpose(matmul(attn, v), 1, 2)
        return self.w_o(reshape(out, (b, length, width)))


class DecoderLayer(nn.Module):
    """Post-LN block: LN(y + MSA(y)) -> LN(. + MCA(., X)) -> LN(. + FFN(.))."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.self_attn = MultiHeadAttention(config.width, config.heads)
        self.cross_attn = MultiHeadAttention(config.width, config.heads)
        self.ffn = nn.Sequential(
            nn.Linear(config.width, config.ff_width),
            nn.GELU(),
            nn.Linear(config.ff_width, config.width),
        )
        self.norm_self = nn.LayerNorm(config.width)
        self.norm_cross = nn.LayerNorm(config.width)
        self.norm_ffn = nn.LayerNorm(config.width)

    def forward(self, y: torch.Tensor, features: torch.Tensor) -> torch.Tensor:
        y = self.norm_self(y + self.self_attn(y, y, causal=True))
        y = self.norm_cross(y + self.cross_attn(y, features))
        return self.norm_ffn(y + self.ffn(y))


class LabelEmbedding(nn.Module):
    """
    2d+1 rows: row 0 is the start marker, a bit b at sequence position i
    maps to row 1 + 2i + b, so equal bits at different depths embed differently.
    """

    def __init__(self, depth: int, width: int):
        super().__init__()
        self.depth = depth
        self.table = nn.Embedding(2 * depth + 1, width)

    @staticmethod
    def row_index(position: int, bit: int) -> int:
        if bit == START_TOKEN:
            return 0
        return 1 + 2 * position + bit

    def rows(self, tokens: torch.Tensor) -> torch.Tensor:
        tokens = torch.as_tensor(tokens, dtype=torch.long)
        if tokens.dim() == 1:
            tokens = tokens.unsqueeze(0)
        if tokens.shape[1] > self.depth:
            raise InvalidPathError(
                f"target has {tokens.shape[1]} tokens, tree depth is {self.depth}"
            )
        if ((tokens != START_TOKEN) & (tokens != 0) & (tokens != 1)).any():
            raise InvalidPathError("target tokens must be the start marker, 0 or 1")
        positions = torch.arange(tokens.shape[1]).expand_as(tokens)
        return torch.where(tokens == START_TOKEN, torch.zeros_like(tokens), 1 + 2 * positions + tokens)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        return self.table(self.rows(tokens))


@dataclass
class DecodeResult:
    """Batched greedy decoding output; index [i] for one sample."""

    paths: torch.Tensor        # (B, d) emitted bits
    categories: torch.Tensor   # (B,)
    logits: torch.Tensor       # (B, d, n) y_out
    masks: torch.Tensor        # (B, d, n)
    y_prob: torch.Tensor       # (B, d, n)
    p_left: np.ndarray         # (B, d)
    p_right: np.ndarray        # (B, d)

    def steps(self, i: int) -> List[StepOutput]:
        return steps_from_arrays(
            self.logits[i].tolist(),
            self.masks[i].tolist(),
            self.y_prob[i].tolist(),
            self.p_left[i],
            self.p_right[i],
            self.paths[i].tolist(),
        )


class Ord2SeqModel(nn.Module):
    """
    Ordinal classifier predicting the dichotomic-tree path of a category.

    Training uses teacher forcing with ground-truth multi-hot masks;
    inference feeds each decided bit back as the next query.
    """

    def __init__(
        self,
        num_categories: int,
        config: Optional[ModelConfig] = None,
        alpha: float = DEFAULT_ALPHA,
        clamp_eps: float = CLAMP_EPS,
    ):
        super().__init__()
        self.config = config or ModelConfig()
        self.alpha = check_alpha(alpha)
        self.clamp_eps = clamp_eps
        self.tree = DichotomicTree(num_categories)
        self.num_categories = self.tree.n
        self.depth = self.tree.depth

        self.encoder = FeatureEncoder(self.config)
        self.label_embedding = LabelEmbedding(self.depth, self.config.width)
        self.layers = nn.ModuleList([DecoderLayer(self.config) for _ in range(self.config.layers)])
        num_heads = 1 if self.config.shared_head else self.depth
        self.heads = nn.ModuleList(
            [nn.Linear(self.config.width, self.num_categories) for _ in range(num_heads)]
        )

        left, right, children = self.tree.node_child_masks()
        self._left_masks, self._right_masks, self._children = left, right, children
        self.register_buffer("path_table", torch.as_tensor(self.tree.path_table()), persistent=False)
        self.register_buffer(
            "multihot_table", torch.as_tensor(self.tree.multihot_table(), dtype=DTYPE), persistent=False
        )
        self.register_buffer(
            "range_masks", torch.as_tensor(self.tree.range_masks(), dtype=DTYPE), persistent=False
        )

        initialize_weights(self, self.config.width)
        self.to(DTYPE)

    def head(self, t: int) -> nn.Linear:
        """Output head of step t (1-based)."""
        return self.heads[0] if self.config.shared_head else self.heads[t - 1]

    def count_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters() if p.requires_grad)

    # ------------------------------------------------------------------
    # Decoder
    # ------------------------------------------------------------------
    def encode(self, x: torch.Tensor) -> torch.Tensor:
        return self.encoder(x.to(DTYPE))

    def _pad_tokens(self, tokens: torch.Tensor) -> torch.Tensor:
        # Every pass runs on the full depth; causal attention makes the padding
        # invisible to earlier positions, so greedy and teacher-forced logits agree bitwise.
        tokens = torch.as_tensor(tokens, dtype=torch.long)
        if tokens.dim() == 1:
            tokens = tokens.unsqueeze(0)
        if tokens.shape[1] > self.depth:
            raise InvalidPathError(f"{tokens.shape[1]} query tokens exceed tree depth {self.depth}")
        pad = torch.full((tokens.shape[0], self.depth - tokens.shape[1]), START_TOKEN, dtype=torch.long)
        return torch.cat([tokens, pad], dim=1)

    def decode_hidden(self, features: torch.Tensor, tokens: torch.Tensor) -> torch.Tensor:
        y = self.label_embedding(self._pad_tokens(tokens))
        for layer in self.layers:
            y = layer(y, features)
        return y

    def decode_step(self, features: torch.Tensor, tokens: torch.Tensor, t: int) -> torch.Tensor:
        """
        Logits y_out^t of step t (1-based) given queries y_in^{1..t}.

        Args:
            features: (B, tokens, width) encoder output X
            tokens: (B, >= t) shifted-target tokens; only the first t are read
            t: step index in [1, d]
        """
        if not 1 <= t <= self.depth:
            raise InvalidPathError(f"step {t} outside [1, {self.depth}]")
        tokens = torch.as_tensor(tokens, dtype=torch.long)
        if tokens.dim() == 1:
            tokens = tokens.unsqueeze(0)
        if tokens.shape[1] < t:
            raise InvalidPathError(f"step {t} needs {t} query tokens, got {tokens.shape[1]}")
        hidden = self.decode_hidden(features, tokens[:, :t])
        return self.head(t)(hidden[:, t - 1])

    def forward(self, x: torch.Tensor, tokens: torch.Tensor) -> torch.Tensor:
        """Teacher-forced logits for every step: (B, L, n) for L = tokens.shape[1]."""
        features = self.encode(x)
        tokens = torch.as_tensor(tokens, dtype=torch.long)
        hidden = self.decode_hidden(features, tokens)
        steps = [self.head(t + 1)(hidden[:, t]) for t in range(tokens.shape[1])]
        return torch.stack(steps, dim=1)

    # ------------------------------------------------------------------
    # Training path
    # ------------------------------------------------------------------
    def teacher_forcing_tokens(self, labels: torch.Tensor) -> torch.Tensor:
        """Shifted ground-truth paths [s, c1, ..., c(d-1)] for a batch of labels."""
        paths = self.path_table[labels]
        start = torch.full((paths.shape[0], 1), START_TOKEN, dtype=torch.long)
        return torch.cat([start, paths[:, :-1]], dim=1)

    def teacher_forcing_masks(self, labels: torch.Tensor, alpha: Optional[float] = None) -> torch.Tensor:
        """(B, d, n) masks from ground-truth o_{t-1}; the first step is all ones."""
        alpha = self.alpha if alpha is None else check_alpha(alpha)
        mht = self.multihot_table[labels]
        prev = torch.cat([torch.ones_like(mht[:, :1]), mht[:, :-1]], dim=1)
        return torch.where(prev > 0.5, torch.ones_like(prev), torch.full_like(prev, alpha))

    def masked_probabilities(self, x: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
        logits = self.forward(x, self.teacher_forcing_tokens(labels))
        return mul(sigmoid(logits), self.teacher_forcing_masks(labels))

    def training_loss(self, x: torch.Tensor, labels: torch.Tensor) -> LossReport:
        labels = torch.as_tensor(labels, dtype=torch.long)
        y_prob = self.masked_probabilities(x, labels)
        return sequence_bce(y_prob, self.multihot_table[labels], eps=self.clamp_eps)

    # ------------------------------------------------------------------
    # Inference path
    # ------------------------------------------------------------------
    @torch.no_grad()
    def greedy_decode(self, x: torch.Tensor) -> DecodeResult:
        """
        Autoregressive decoding: each decided bit is embedded and fed back as
        the next query; the step-t mask comes from the node chosen at step t-1.
        """
        features = self.encode(x)
        batch = features.shape[0]
        tokens = torch.full((batch, self.depth), START_TOKEN, dtype=torch.long)
        nodes = np.zeros(batch, dtype=np.int64)

        paths = torch.zeros((batch, self.depth), dtype=torch.long)
        logits, masks, probs = [], [], []
        p_left = np.zeros((batch, self.depth))
        p_right = np.zeros((batch, self.depth))

        for t in range(1, self.depth + 1):
            y_out = self.decode_step(features, tokens, t)
            surviving = self.range_masks[torch.as_tensor(nodes)]
            mask = torch.where(surviving > 0.5, torch.ones_like(surviving), torch.full_like(surviving, self.alpha))
            y_prob = mul(sigmoid(y_out), mask)

            bits, pl, pr = decide_batch(y_prob, self._left_masks[nodes], self._right_masks[nodes])
            nodes = self._children[nodes, bits]

            paths[:, t - 1] = torch.as_tensor(bits)
            if t < self.depth:
                tokens[:, t] = torch.as_tensor(bits)
            logits.append(y_out)
            masks.append(mask)
            probs.append(y_prob)
            p_left[:, t - 1], p_right[:, t - 1] = pl, pr

        categories = torch.as_tensor([self.tree.nodes[i].lo for i in nodes], dtype=torch.long)
        return DecodeResult(
            paths=paths,
            categories=categories,
            logits=torch.stack(logits, dim=1),
            masks=torch.stack(masks, dim=1),
            y_prob=torch.stack(probs, dim=1),
            p_left=p_left,
            p_right=p_right,
        )

    @torch.no_grad()
    def predict(self, x: torch.Tensor) -> torch.Tensor:
        return self.greedy_decode(x).categories


def greedy_decode(model: Ord2SeqModel, x: torch.Tensor, tree: Optional[DichotomicTree] = None) -> DecodeResult:
    """Module-level entry point; the tree, when given, must match the model's."""
    if tree is not None and tree.n != model.num_categories:
        raise ConfigError(f"tree has {tree.n} categories, model has {model.num_categories}")
    return model.greedy_decode(x)


def trace_records(result: DecodeResult, sample_offset: int = 0) -> List[dict]:
    """Flatten a decode into one JSON-ready record per (sample, step)."""
    records = []
    for i in range(len(result.categories)):
        category = int(result.categories[i])
        for step in result.steps(i):
            records.append({"sample": sample_offset + i, "category": category, **step.to_dict()})
    return records
