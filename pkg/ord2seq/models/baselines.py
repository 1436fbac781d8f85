"""
Flat n-way classifiers used as ablation baselines.

SoftmaxBaseline: the feature encoder with a single softmax head (no ordinal
structure, no decoder). OneShotModel: the same decoder stack queried once by
the start marker, predicting the category in a single step.
"""

import torch
import torch.nn as nn

from models.losses import LossReport, cross_entropy_report
from models.ord2seq_model import DecoderLayer, FeatureEncoder, ModelConfig, initialize_weights
from utils.errors import InvalidCategoryCountError
from utils.numerics import DTYPE, reshape


class SoftmaxBaseline(nn.Module):
    def __init__(self, num_categories: int, config: ModelConfig = None):
        super().__init__()
        if num_categories < 2:
            raise InvalidCategoryCountError(f"category count must be >= 2, got {num_categories}")
        self.config = config or ModelConfig()
        self.num_categories = num_categories
        self.encoder = FeatureEncoder(self.config)
        self.output_layer = nn.Linear(self.config.feature_tokens * self.config.width, num_categories)
        initialize_weights(self, self.config.width)
        self.to(DTYPE)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        features = self.encoder(x.to(DTYPE))
        return self.output_layer(reshape(features, (features.shape[0], -1)))

    def training_loss(self, x: torch.Tensor, labels: torch.Tensor) -> LossReport:
        return cross_entropy_report(self.forward(x), torch.as_tensor(labels, dtype=torch.long))

    @torch.no_grad()
    def predict(self, x: torch.Tensor) -> torch.Tensor:
        return self.forward(x).argmax(dim=1)


class OneShotModel(nn.Module):
    """Encoder + decoder layers with one start query and an n-way head."""

    def __init__(self, num_categories: int, config: ModelConfig = None):
        super().__init__()
        if num_categories < 2:
            raise InvalidCategoryCountError(f"category count must be >= 2, got {num_categories}")
        self.config = config or ModelConfig()
        self.num_categories = num_categories
        self.encoder = FeatureEncoder(self.config)
        self.start_query = nn.Parameter(torch.randn(1, 1, self.config.width) * 0.02)
        self.layers = nn.ModuleList([DecoderLayer(self.config) for _ in range(self.config.layers)])
        self.output_layer = nn.Linear(self.config.width, num_categories)
        initialize_weights(self, self.config.width)
        self.to(DTYPE)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        features = self.encoder(x.to(DTYPE))
        y = self.start_query.expand(features.shape[0], -1, -1)
        for layer in self.layers:
            y = layer(y, features)
        return self.output_layer(y[:, 0])

    def training_loss(self, x: torch.Tensor, labels: torch.Tensor) -> LossReport:
        return cross_entropy_report(self.forward(x), torch.as_tensor(labels, dtype=torch.long))

    @torch.no_grad()
    def predict(self, x: torch.Tensor) -> torch.Tensor:
        return self.forward(x).argmax(dim=1)
