"""Recurrent set generator: one 85-vector of body parameters per step.

Wiring per step t (all states start at zero):

1. the latent vector is concatenated onto every word embedding row and a
   two-layer encoder maps each row to a per-word feature (rows stay
   separate so the attention can pick words apart);
2. a 3-layer attention network scores each word feature against the
   previous top-cell hidden state; padding rows are masked out before the
   softmax, so the weights sum to 1 over real words;
3. the attention-weighted feature sum, the previous first-cell hidden
   state and the previous emitted parameters are concatenated and fed to a
   stack of three LSTM cells with fully connected gates;
4. an affine head on the top cell emits s_t, which is fed back as the
   "previous output" at t + 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .body_model import PARAM_DIM, ShapeSet
from .config import GeneratorConfig, TextConfig
from .errors import InvalidCount, ShapeMismatch
from .text_encoder import WordEmbeddings

LATENT_DIM = 120


@dataclass
class GeneratorTrace:
    """Instrumented per-step state capture (testing hook)."""

    step_hidden_in: list = field(default_factory=list)   # h of every cell at step entry
    step_output_in: list = field(default_factory=list)   # o_{t-1} at step entry
    attention: list = field(default_factory=list)


class SetGenerator(nn.Module):
    def __init__(self, cfg: GeneratorConfig = GeneratorConfig(),
                 text: TextConfig = TextConfig()):
        super().__init__()
        self.cfg = cfg
        self.text = text
        f = cfg.word_feature_dim
        h = cfg.hidden_dim
        self.cond_fc1 = nn.Linear(text.embed_dim + cfg.latent_dim, cfg.encoder_hidden)
        self.cond_fc2 = nn.Linear(cfg.encoder_hidden, f)
        self.attn_fc1 = nn.Linear(f + h, cfg.attention_hidden)
        self.attn_fc2 = nn.Linear(cfg.attention_hidden, cfg.attention_hidden)
        self.attn_fc3 = nn.Linear(cfg.attention_hidden, 1)
        self.cells = nn.ModuleList([
            nn.LSTMCell(f + h + PARAM_DIM, h),
            nn.LSTMCell(h, h),
            nn.LSTMCell(h, h),
        ])
        self.head = nn.Linear(h, PARAM_DIM)
        self._act = nn.LeakyReLU(cfg.leaky_slope)

    def encode_condition(self, x: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
        """x (B, n, L), z (B, latent) -> per-word features (B, n, F)."""
        if z.shape[-1] != self.cfg.latent_dim:
            raise ShapeMismatch(f"latent vector must have length {self.cfg.latent_dim}")
        n = x.shape[1]
        z_rep = z.unsqueeze(1).expand(-1, n, -1)
        rows = torch.cat([x, z_rep], dim=-1)
        return self._act(self.cond_fc2(self._act(self.cond_fc1(rows))))

    def attention_step(self, features: torch.Tensor, h_prev: torch.Tensor,
                       mask: torch.Tensor) -> torch.Tensor:
        """features (B, n, F), h_prev (B, H), mask (B, n) -> weights (B, n)."""
        n = features.shape[1]
        h_rep = h_prev.unsqueeze(1).expand(-1, n, -1)
        a = self._act(self.attn_fc1(torch.cat([features, h_rep], dim=-1)))
        a = self._act(self.attn_fc2(a))
        logits = self.attn_fc3(a).squeeze(-1)
        logits = logits.masked_fill(~mask, float("-inf"))
        return torch.softmax(logits, dim=-1)

    def forward(self, x: torch.Tensor, mask: torch.Tensor, z: torch.Tensor, k: int,
                trace: GeneratorTrace | None = None) -> tuple[torch.Tensor, torch.Tensor]:
        """Emit k parameter vectors: returns (B, k, 85) and weights (B, k, n)."""
        batch = x.shape[0]
        h_dim = self.cfg.hidden_dim
        dtype, device = x.dtype, x.device
        features = self.encode_condition(x, z)

        hs = [torch.zeros(batch, h_dim, dtype=dtype, device=device) for _ in self.cells]
        cs = [torch.zeros(batch, h_dim, dtype=dtype, device=device) for _ in self.cells]
        out_prev = torch.zeros(batch, PARAM_DIM, dtype=dtype, device=device)

        outputs = []
        weights = []
        for _ in range(k):
            if trace is not None:
                trace.step_hidden_in.append([h.detach().clone() for h in hs])
                trace.step_output_in.append(out_prev.detach().clone())
            w = self.attention_step(features, hs[-1], mask)
            context = (w.unsqueeze(-1) * features).sum(dim=1)
            inp = torch.cat([context, hs[0], out_prev], dim=-1)
            for i, cell in enumerate(self.cells):
                hs[i], cs[i] = cell(inp, (hs[i], cs[i]))
                inp = hs[i]
            s_t = self.head(hs[-1])
            out_prev = s_t
            outputs.append(s_t)
            weights.append(w)
            if trace is not None:
                trace.attention.append(w.detach().clone())
        return torch.stack(outputs, dim=1), torch.stack(weights, dim=1)


def embeddings_to_torch(x: WordEmbeddings, dtype: torch.dtype) -> tuple[torch.Tensor, torch.Tensor]:
    """WordEmbeddings -> (matrix (1, n, L), real-word mask (1, n))."""
    mat = torch.as_tensor(x.matrix, dtype=dtype)[None]
    mask = torch.zeros(1, x.max_words, dtype=torch.bool)
    mask[0, :x.word_count] = True
    return mat, mask


def generate_set(gen: SetGenerator, z: np.ndarray, x: WordEmbeddings, k: int,
                 k_max: int) -> tuple[ShapeSet, np.ndarray]:
    """Inference wrapper around :meth:`SetGenerator.forward` for one caption."""
    if not (1 <= k <= k_max):
        raise InvalidCount(f"requested set size {k} outside [1, {k_max}]")
    x.validate()
    dtype = next(gen.parameters()).dtype
    z_t = torch.as_tensor(np.asarray(z, dtype=np.float64), dtype=dtype).reshape(1, -1)
    mat, mask = embeddings_to_torch(x, dtype)
    with torch.no_grad():
        params, weights = gen(mat, mask, z_t, k)
    return ShapeSet.from_array(params[0].double().numpy()), weights[0].double().numpy()
