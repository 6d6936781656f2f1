"""Checkpoint container: named parameter arrays + config echo + version.

One deterministic file holds any subset of the model sections (generator,
param_critic, render_critic, count_predictor).  Models are rebuilt from the
echoed training config, with per-section seeds so each module's
initialization stream is independent of the others' sizes.
"""

from __future__ import annotations

import hashlib
from typing import Optional

import numpy as np
import torch
from torch import nn

from . import container
from .config import CountTrainConfig, TrainConfig, config_hash, from_dict, to_dict
from .count_predictor import CountPredictor
from .critics import ParamSetCritic, RenderSetCritic
from .errors import MalformedRecord
from .generator import SetGenerator

CHECKPOINT_FORMAT = "checkpoint"
SECTION_SEEDS = {"generator": 0, "param_critic": 1, "render_critic": 2, "count_predictor": 3}


def _torch_dtype(name: str) -> torch.dtype:
    return torch.float64 if name == "float64" else torch.float32


def module_digest(module: nn.Module) -> str:
    """sha256 over the module's parameter and buffer bytes in state-dict order."""
    h = hashlib.sha256()
    for name, tensor in module.state_dict().items():
        h.update(name.encode("utf-8"))
        h.update(tensor.detach().cpu().numpy().tobytes())
    return h.hexdigest()


def build_gan_models(cfg: TrainConfig) -> dict[str, nn.Module]:
    """Construct generator and both critics with deterministic init."""
    dtype = _torch_dtype(cfg.dtype)
    torch.manual_seed(cfg.seed + SECTION_SEEDS["generator"])
    gen = SetGenerator(cfg.generator, cfg.text).to(dtype)
    torch.manual_seed(cfg.seed + SECTION_SEEDS["param_critic"])
    critic1 = ParamSetCritic(cfg.param_critic, cfg.text).to(dtype)
    torch.manual_seed(cfg.seed + SECTION_SEEDS["render_critic"])
    critic2 = RenderSetCritic(cfg.render_critic, cfg.text,
                              resolution=cfg.render.resolution).to(dtype)
    return {"generator": gen, "param_critic": critic1, "render_critic": critic2}


def build_count_predictor(cfg: CountTrainConfig, k_max: int) -> CountPredictor:
    torch.manual_seed(cfg.seed + SECTION_SEEDS["count_predictor"])
    return CountPredictor(k_max, cfg.predictor).to(_torch_dtype(cfg.dtype))


def save_checkpoint(path, sections: dict[str, nn.Module], kind: str,
                    config: TrainConfig | CountTrainConfig, k_max: int,
                    embedder_spec: dict, step: int = 0, epoch: int = 0,
                    extra_sections: Optional[dict[str, dict[str, np.ndarray]]] = None,
                    extra_meta: Optional[dict] = None) -> None:
    arrays: dict[str, np.ndarray] = {}
    names = {}
    for section, module in sections.items():
        keys = []
        for name, tensor in module.state_dict().items():
            arrays[f"{section}/{name}"] = tensor.detach().cpu().numpy()
            keys.append(name)
        names[section] = keys
    for section, state in (extra_sections or {}).items():
        keys = []
        for name, arr in state.items():
            arrays[f"{section}/{name}"] = arr
            keys.append(name)
        names[section] = keys
    meta = {
        "kind": kind,
        "config_type": type(config).__name__,
        "config": to_dict(config),
        "config_hash": config_hash(config),
        "k_max": k_max,
        "embedder": embedder_spec,
        "step": step,
        "epoch": epoch,
        "sections": names,
    }
    meta.update(extra_meta or {})
    container.save(path, CHECKPOINT_FORMAT, meta, arrays)


def _section_state(meta: dict, arrays: dict, section: str) -> dict[str, torch.Tensor]:
    state = {}
    for name in meta["sections"][section]:
        key = f"{section}/{name}"
        if key not in arrays:
            raise MalformedRecord(f"checkpoint missing array {key!r}")
        state[name] = torch.as_tensor(arrays[key])
    return state


class LoadedCheckpoint:
    def __init__(self, meta: dict, arrays: dict):
        self.meta = meta
        self.arrays = arrays
        cfg_type = meta.get("config_type", "TrainConfig")
        cls = TrainConfig if cfg_type == "TrainConfig" else CountTrainConfig
        self.config = from_dict(cls, meta["config"])
        self.k_max = int(meta["k_max"])
        self.embedder_spec = meta["embedder"]

    def has_section(self, section: str) -> bool:
        return section in self.meta["sections"]

    def load_gan_models(self) -> dict[str, nn.Module]:
        if not isinstance(self.config, TrainConfig):
            raise MalformedRecord("this checkpoint does not hold GAN sections")
        models = build_gan_models(self.config)
        for section, module in models.items():
            if self.has_section(section):
                module.load_state_dict(_section_state(self.meta, self.arrays, section))
        return models

    def load_count_predictor(self, count_cfg: Optional[CountTrainConfig] = None) -> CountPredictor:
        if not self.has_section("count_predictor"):
            raise MalformedRecord("checkpoint has no count_predictor section")
        cfg = count_cfg
        if cfg is None:
            cfg = self.config if isinstance(self.config, CountTrainConfig) else None
        if cfg is None:
            counter_meta = self.meta.get("counter_config")
            cfg = from_dict(CountTrainConfig, counter_meta) if counter_meta else CountTrainConfig()
        model = build_count_predictor(cfg, self.k_max)
        model.load_state_dict(_section_state(self.meta, self.arrays, "count_predictor"))
        return model


def load_checkpoint(path) -> LoadedCheckpoint:
    meta, arrays = container.load(path, CHECKPOINT_FORMAT)
    return LoadedCheckpoint(meta, arrays)
