"""Shallow caption-to-person-count classifier used to halt generation.

Pretrained with cross-entropy on (embedding, ground-truth count) pairs
before adversarial training; at inference the selected count tells the
generator how many recurrent steps to run.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .config import CountPredictorConfig, TextConfig
from .errors import InvalidCount, MalformedRecord
from .text_encoder import WordEmbeddings

SELECT_MODES = ("argmax", "expected")


@dataclass
class CountDistribution:
    """Probabilities over counts {1 .. k_max}."""

    probs: np.ndarray

    @property
    def k_max(self) -> int:
        return int(self.probs.shape[0])

    def validate(self) -> None:
        if self.probs.ndim != 1 or self.probs.shape[0] < 1:
            raise MalformedRecord("count distribution must be a non-empty vector")
        if (self.probs < 0).any() or abs(float(self.probs.sum()) - 1.0) > 1e-6:
            raise MalformedRecord("count distribution must be nonnegative and sum to 1")


class CountPredictor(nn.Module):
    def __init__(self, k_max: int, cfg: CountPredictorConfig = CountPredictorConfig(),
                 text: TextConfig = TextConfig()):
        super().__init__()
        self.k_max = k_max
        self.fc1 = nn.Linear(text.embed_dim, cfg.hidden_dim)
        self.fc2 = nn.Linear(cfg.hidden_dim, k_max)
        self._act = nn.LeakyReLU(0.2)

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """x (B, n, L), mask (B, n) -> logits (B, k_max).

        Mean pool over real (non-padding) word rows, then two affine layers.
        """
        weights = mask.to(x.dtype)
        pooled = (x * weights.unsqueeze(-1)).sum(dim=1) / weights.sum(dim=1, keepdim=True)
        return self.fc2(self._act(self.fc1(pooled)))


def predict_count_distribution(x: WordEmbeddings, model: CountPredictor) -> CountDistribution:
    from .generator import embeddings_to_torch

    x.validate()
    dtype = next(model.parameters()).dtype
    mat, mask = embeddings_to_torch(x, dtype)
    with torch.no_grad():
        logits = model(mat, mask)
        probs = torch.softmax(logits, dim=-1)[0]
    dist = CountDistribution(probs=probs.double().numpy())
    dist.validate()
    return dist


def select_count(p: CountDistribution, mode: str = "argmax") -> int:
    """Pick a count in [1, k_max].

    ``argmax`` returns the smallest-index maximizer; ``expected`` rounds
    the mean count half up.  Counts are 1-based.
    """
    p.validate()
    if mode not in SELECT_MODES:
        raise InvalidCount(f"unknown count selection mode {mode!r}")
    if mode == "argmax":
        return int(np.argmax(p.probs)) + 1
    counts = np.arange(1, p.k_max + 1, dtype=np.float64)
    expected = float((counts * p.probs).sum())
    rounded = int(np.floor(expected + 0.5))
    return min(max(rounded, 1), p.k_max)
