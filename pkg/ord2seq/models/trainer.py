"""
Training configuration, model factory and the trainer loop shared by the
Ord2Seq variants and the flat baselines.
"""

import copy
import logging
import math
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, List, Optional

import torch
import torch.nn as nn
from pydantic import BaseModel, Field, field_validator

from models.baselines import OneShotModel, SoftmaxBaseline
from models.losses import CLAMP_EPS
from models.masked_decision import DEFAULT_ALPHA, check_alpha
from models.ord2seq_model import ModelConfig, Ord2SeqModel
from utils.checkpoint import write_json
from utils.errors import NaNLossError
from utils.numerics import adam_step, backward, make_adam

logger = logging.getLogger(__name__)


class Variant(str, Enum):
    FULL = "full"
    NO_MASK = "no-mask"
    ONE_SHOT = "one-shot"
    SOFTMAX_BASELINE = "softmax-baseline"


class TrainConfig(BaseModel):
    categories: int = Field(..., ge=2)
    alpha: float = DEFAULT_ALPHA
    epochs: int = Field(50, ge=1)
    batch_size: int = Field(32, ge=1)
    lr: float = Field(1e-4, gt=0)
    seed: int = 0
    variant: Variant = Variant.FULL
    clamp_eps: float = Field(CLAMP_EPS, gt=0, lt=0.5)
    log_every: int = Field(10, ge=1)
    model: ModelConfig = Field(default_factory=ModelConfig)

    @field_validator("alpha")
    @classmethod
    def _alpha_range(cls, v: float) -> float:
        return check_alpha(v)

    @property
    def effective_alpha(self) -> float:
        """no-mask is the full pipeline with alpha forced to 1."""
        return 1.0 if self.variant == Variant.NO_MASK else self.alpha


def build_model(config: TrainConfig) -> nn.Module:
    """Instantiate the model for config.variant (parameters drawn from torch's global RNG)."""
    if config.variant in (Variant.FULL, Variant.NO_MASK):
        return Ord2SeqModel(
            config.categories,
            config.model,
            alpha=config.effective_alpha,
            clamp_eps=config.clamp_eps,
        )
    if config.variant == Variant.ONE_SHOT:
        return OneShotModel(config.categories, config.model)
    return SoftmaxBaseline(config.categories, config.model)


class Trainer:
    """Trainer for any model exposing training_loss(x, y) and predict(x)."""

    def __init__(
        self,
        model: nn.Module,
        config: TrainConfig,
        diagnostics_dir: Optional[str] = None,
    ):
        """
        Args:
            model: Ord2SeqModel, OneShotModel or SoftmaxBaseline
            config: TrainConfig (lr, epochs, logging cadence)
            diagnostics_dir: Where a NaN abort dumps its diagnostics (default: cwd)
        """
        self.model = model
        self.config = config
        self.diagnostics_dir = Path(diagnostics_dir or ".")
        self.optimizer = make_adam(model.parameters(), lr=config.lr)

        self.epoch_records: List[Dict] = []
        self.best_epoch: Optional[int] = None
        self.best_model_state = None
        self._epoch = 0

    def _dump_nan_diagnostics(self, batch_idx: int, per_step: List[float]) -> str:
        param_norms = {
            name: float(p.detach().norm())
            for name, p in self.model.named_parameters()
        }
        payload = {
            "epoch": self._epoch,
            "batch": batch_idx,
            "per_step_loss": per_step,
            "config": self.config.model_dump(mode="json"),
            "param_norms": param_norms,
            "non_finite_params": [n for n, v in param_norms.items() if not math.isfinite(v)],
            "history": self.epoch_records,
        }
        return write_json(self.diagnostics_dir / "nan_diagnostics.json", payload)

    def train_epoch(self, train_loader: torch.utils.data.DataLoader) -> float:
        """
        One pass over the loader: loss, backward, Adam step per batch.

        Returns:
            Mean batch loss
        """
        if len(train_loader) == 0:
            raise ValueError("training loader is empty")
        self.model.train()
        params = [p for p in self.model.parameters() if p.requires_grad]
        total_loss = 0.0

        for batch_idx, (batch_X, batch_y) in enumerate(train_loader):
            report = self.model.training_loss(batch_X, batch_y)
            if not torch.isfinite(report.total):
                path = self._dump_nan_diagnostics(batch_idx, report.to_dict()["per_step"])
                logger.error("Non-finite loss at epoch %d batch %d; diagnostics in %s",
                             self._epoch, batch_idx, path)
                raise NaNLossError(
                    f"non-finite loss at epoch {self._epoch}, batch {batch_idx}", diagnostics_path=path
                )

            self.optimizer.zero_grad(set_to_none=True)
            backward(report.total, params)
            adam_step(self.optimizer)
            total_loss += float(report.total.detach())

        return total_loss / len(train_loader)

    @torch.no_grad()
    def validate(self, loader: torch.utils.data.DataLoader) -> Dict[str, float]:
        """
        Returns:
            {loss, accuracy, mae} on the loader
        """
        self.model.eval()
        total_loss, errors, correct, count = 0.0, 0.0, 0, 0
        for batch_X, batch_y in loader:
            total_loss += float(self.model.training_loss(batch_X, batch_y).total)
            pred = self.model.predict(batch_X)
            correct += int((pred == batch_y).sum())
            errors += float((pred - batch_y).abs().sum())
            count += len(batch_y)
        if count == 0:
            raise ValueError("validation loader is empty")
        return {
            "loss": total_loss / len(loader),
            "accuracy": correct / count,
            "mae": errors / count,
        }

    def train(
        self,
        train_loader: torch.utils.data.DataLoader,
        val_loader: torch.utils.data.DataLoader,
        num_epochs: Optional[int] = None,
        on_epoch_done: Optional[Callable[[Dict], None]] = None,
    ) -> Dict:
        """
        Fixed number of epochs; the state with the lowest validation MAE is restored
        at the end (earliest epoch wins ties).

        Returns:
            Dictionary with the epoch records and the best epoch
        """
        num_epochs = num_epochs or self.config.epochs
        best_val_mae = float("inf")

        for epoch in range(num_epochs):
            self._epoch = epoch
            train_loss = self.train_epoch(train_loader)
            val = self.validate(val_loader)

            record = {
                "epoch": epoch,
                "loss": train_loss,
                "val_accuracy": val["accuracy"],
                "val_mae": val["mae"],
            }
            self.epoch_records.append(record)
            if on_epoch_done is not None:
                on_epoch_done(record)

            if epoch % self.config.log_every == 0 or epoch == num_epochs - 1:
                logger.info(
                    "Epoch %d: Train Loss=%.4f, Val Acc=%.2f%%, Val MAE=%.4f",
                    epoch, train_loss, 100.0 * val["accuracy"], val["mae"],
                )

            if val["mae"] < best_val_mae:
                best_val_mae = val["mae"]
                self.best_epoch = epoch
                self.best_model_state = copy.deepcopy(self.model.state_dict())

        self.model.load_state_dict(self.best_model_state)
        logger.info("Restored epoch %d (val MAE %.4f)", self.best_epoch, best_val_mae)

        return {
            "epochs": self.epoch_records,
            "best_epoch": self.best_epoch,
            "best_val_mae": best_val_mae,
            "train_losses": [r["loss"] for r in self.epoch_records],
        }
