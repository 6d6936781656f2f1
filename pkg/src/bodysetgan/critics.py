"""Two recurrent Wasserstein critics over (set, caption) pairs.

Both consume a set one element per step and emit a single unbounded score
after the last element; intermediate steps produce no score.  No
normalization layers anywhere: the Lipschitz penalty is per sample and
batch-coupled statistics would break it.

* :class:`ParamSetCritic` scores sets of 85-dim parameter vectors.  Each
  step concatenates the element, the flattened word embeddings and the
  previous top-cell hidden state, passes them through a two-layer encoder
  and then through three LSTM cells with fully connected gates.
* :class:`RenderSetCritic` scores sets of rendered per-person maps.  A
  strided convolutional encoder downscales each map by 16x (224 -> 14 in
  the default profile), projected text features are concatenated
  channel-wise, and three convolutional-gate recurrent cells downscale
  further until an affine head reads the final hidden state.
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

from .body_model import PARAM_DIM
from .config import ParamCriticConfig, RenderCriticConfig, TextConfig
from .errors import EmptySet, ShapeMismatch
from .generator import embeddings_to_torch
from .text_encoder import WordEmbeddings


def _down(size: int) -> int:
    # Conv2d(kernel 3, stride 2, padding 1) output size.
    return (size - 1) // 2 + 1


class ParamSetCritic(nn.Module):
    def __init__(self, cfg: ParamCriticConfig = ParamCriticConfig(),
                 text: TextConfig = TextConfig()):
        super().__init__()
        self.cfg = cfg
        h = cfg.hidden_dim
        e = cfg.encoder_hidden
        text_flat = text.max_words * text.embed_dim
        self.enc_fc1 = nn.Linear(PARAM_DIM + text_flat + h, e)
        self.enc_fc2 = nn.Linear(e, e)
        self.cells = nn.ModuleList([
            nn.LSTMCell(e, h), nn.LSTMCell(h, h), nn.LSTMCell(h, h)])
        self.head = nn.Linear(h, 1)
        self._act = nn.LeakyReLU(cfg.leaky_slope)

    def forward(self, s: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
        """s (B, k, 85), x (B, n, L) -> scores (B,)."""
        batch, k, _ = s.shape
        x_flat = x.reshape(batch, -1)
        h_dim = self.cfg.hidden_dim
        hs = [torch.zeros(batch, h_dim, dtype=s.dtype, device=s.device) for _ in self.cells]
        cs = [torch.zeros(batch, h_dim, dtype=s.dtype, device=s.device) for _ in self.cells]
        for t in range(k):
            inp = torch.cat([s[:, t], x_flat, hs[-1]], dim=-1)
            feat = self._act(self.enc_fc2(self._act(self.enc_fc1(inp))))
            layer_in = feat
            for i, cell in enumerate(self.cells):
                hs[i], cs[i] = cell(layer_in, (hs[i], cs[i]))
                layer_in = hs[i]
        return self.head(hs[-1]).squeeze(-1)


class ConvGateCell(nn.Module):
    """Recurrent cell with convolutional gates; halves the spatial size."""

    def __init__(self, in_channels: int, hidden_channels: int):
        super().__init__()
        self.hidden_channels = hidden_channels
        self.gates_x = nn.Conv2d(in_channels, 4 * hidden_channels, 3, stride=2, padding=1)
        self.gates_h = nn.Conv2d(hidden_channels, 4 * hidden_channels, 3, stride=1, padding=1)

    def forward(self, x: torch.Tensor, state: tuple[torch.Tensor, torch.Tensor]):
        h, c = state
        gates = self.gates_x(x) + self.gates_h(h)
        i, f, g, o = gates.chunk(4, dim=1)
        c_next = torch.sigmoid(f) * c + torch.sigmoid(i) * torch.tanh(g)
        h_next = torch.sigmoid(o) * torch.tanh(c_next)
        return h_next, c_next


class RenderSetCritic(nn.Module):
    def __init__(self, cfg: RenderCriticConfig = RenderCriticConfig(),
                 text: TextConfig = TextConfig(), resolution: int = 224):
        super().__init__()
        self.cfg = cfg
        self.resolution = resolution
        c1, c2, c3, c4 = cfg.channels
        self.encoder = nn.ModuleList([
            nn.Conv2d(3, c1, 3, stride=2, padding=1),
            nn.Conv2d(c1, c2, 3, stride=2, padding=1),
            nn.Conv2d(c2, c3, 3, stride=2, padding=1),
            nn.Conv2d(c3, c4, 3, stride=2, padding=1),
            nn.Conv2d(c4, c4, 3, stride=1, padding=1),
        ])
        size = resolution
        for _ in range(4):
            size = _down(size)
        self.encoded_size = size      # 14 in the 224 profile

        text_flat = text.max_words * text.embed_dim
        self.text_proj = nn.Conv2d(text_flat, cfg.text_channels, 1)

        r1, r2, r3 = cfg.recurrent_channels
        self.cells = nn.ModuleList([
            ConvGateCell(c4 + cfg.text_channels, r1),
            ConvGateCell(r1, r2),
            ConvGateCell(r2, r3),
        ])
        self.cell_sizes = []
        for _ in self.cells:
            size = _down(size)
            self.cell_sizes.append(size)
        self.head = nn.Linear(r3 * size * size, 1)
        self._act = nn.LeakyReLU(cfg.leaky_slope)

    def encode_maps(self, maps: torch.Tensor) -> torch.Tensor:
        """(B*, 3, R, R) -> (B*, C, encoded_size, encoded_size)."""
        feat = maps
        for conv in self.encoder:
            feat = self._act(conv(feat))
        return feat

    def forward(self, maps: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
        """maps (B, k, 3, R, R), x (B, n, L) -> scores (B,)."""
        batch, k = maps.shape[0], maps.shape[1]
        if maps.shape[-1] != self.resolution or maps.shape[-2] != self.resolution:
            raise ShapeMismatch(
                f"maps are {maps.shape[-2]}x{maps.shape[-1]}, critic expects "
                f"{self.resolution}x{self.resolution}")
        feat = self.encode_maps(maps.reshape(batch * k, 3, self.resolution, self.resolution))
        feat = feat.reshape(batch, k, *feat.shape[1:])
        txt = self.text_proj(x.reshape(batch, -1, 1, 1))
        txt = txt.expand(-1, -1, self.encoded_size, self.encoded_size)

        states = []
        for cell, size in zip(self.cells, self.cell_sizes):
            h = torch.zeros(batch, cell.hidden_channels, size, size,
                            dtype=maps.dtype, device=maps.device)
            states.append((h, h.clone()))
        for t in range(k):
            layer_in = torch.cat([feat[:, t], txt], dim=1)
            for i, cell in enumerate(self.cells):
                h, c = cell(layer_in, states[i])
                states[i] = (h, c)
                layer_in = h
        return self.head(states[-1][0].flatten(1)).squeeze(-1)


def score_param_set(critic: ParamSetCritic, s, x: WordEmbeddings) -> float:
    """Score one (parameter set, caption) pair."""
    arr = s.to_array() if hasattr(s, "to_array") else np.asarray(s, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise EmptySet("parameter set is empty")
    if arr.shape[1] != PARAM_DIM:
        raise ShapeMismatch(f"elements must have length {PARAM_DIM}, got {arr.shape[1]}")
    dtype = next(critic.parameters()).dtype
    mat, _ = embeddings_to_torch(x, dtype)
    with torch.no_grad():
        score = critic(torch.as_tensor(arr, dtype=dtype)[None], mat)
    return float(score[0])


def score_render_set(critic: RenderSetCritic, maps, x: WordEmbeddings) -> float:
    """Score one (rendered map set, caption) pair; maps are (k, H, W, 3)."""
    if hasattr(maps, "__len__") and len(maps) and hasattr(maps[0], "image"):
        maps = np.stack([m.image for m in maps])
    arr = np.asarray(maps, dtype=np.float64)
    if arr.ndim != 4 or arr.shape[0] == 0:
        raise EmptySet("rendered map set is empty")
    if arr.shape[1] != critic.resolution or arr.shape[2] != critic.resolution or arr.shape[3] != 3:
        raise ShapeMismatch(
            f"maps must be (k, {critic.resolution}, {critic.resolution}, 3), got {arr.shape}")
    dtype = next(critic.parameters()).dtype
    mat, _ = embeddings_to_torch(x, dtype)
    tensor = torch.as_tensor(arr, dtype=dtype).permute(0, 3, 1, 2)[None]
    with torch.no_grad():
        score = critic(tensor, mat)
    return float(score[0])
