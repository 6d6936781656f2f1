"""Set-level distances with optimal matching, in parameter and UV space.

Two shape sets are compared by solving a linear assignment over pairwise
element costs (Euclidean distance of the 85-vectors, or Frobenius distance
of the rendered per-person maps).  Unequal cardinalities are handled by
padding the cost matrix: every unmatched element contributes its distance
to the zero parameter vector (parameter space) or to the constant
background map (UV space), and the assignment minimizes matched cost plus
these penalties jointly, which keeps the total symmetric and monotone in
cardinality error.

The aggregate metrics over a sampled caption pool are:

* ``d_nn``   - mean matched distance to the nearest real set in the pool,
* ``d_gt``   - mean matched distance to the caption's own real set,
* ``d_t_pnn``- mean caption-embedding distance to the nearest neighbor's
  caption (per space, since nearest neighbors differ per space),
* ``d_t_all``- mean pairwise embedding distance over the pool, which does
  not depend on the generator at all.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch
from scipy.optimize import linear_sum_assignment

from .body_model import BodyModelAssets, PARAM_DIM, ShapeSet, lbs_forward
from .config import RenderConfig
from .dataset import Sample
from .errors import EmptySet, InvalidSpec
from .renderer import background_map, render_maps
from .text_encoder import text_distance

SPACES = ("param", "uv")


@dataclass
class Matching:
    pairs: list[tuple[int, int]]
    matched_cost: float
    penalty: float

    @property
    def cost(self) -> float:
        return self.matched_cost + self.penalty


@dataclass
class SetMetrics:
    d_nn_param: float
    d_gt_param: float
    d_t_pnn_param: float
    d_t_all: float
    d_nn_uv: Optional[float] = None
    d_gt_uv: Optional[float] = None
    d_t_pnn_uv: Optional[float] = None
    sample_n: int = 0

    def to_dict(self) -> dict:
        return {
            "d_nn_param": self.d_nn_param,
            "d_gt_param": self.d_gt_param,
            "d_t_pnn_param": self.d_t_pnn_param,
            "d_t_all": self.d_t_all,
            "d_nn_uv": self.d_nn_uv,
            "d_gt_uv": self.d_gt_uv,
            "d_t_pnn_uv": self.d_t_pnn_uv,
            "sample_n": self.sample_n,
        }


class RenderContext:
    """Bundles body assets and render settings for UV-space costs.

    Rendered maps are cached by parameter bytes, so repeated matchings over
    the same pool render each element once.
    """

    def __init__(self, assets: BodyModelAssets, render: RenderConfig):
        self.assets = assets
        self.render = render
        self._cache: dict[bytes, np.ndarray] = {}

    def render_flat(self, params: np.ndarray) -> np.ndarray:
        """One 85-vector -> flattened rendered map (float64)."""
        key = np.ascontiguousarray(params).tobytes()
        cached = self._cache.get(key)
        if cached is None:
            bt = self.assets.to_torch(torch.float64)
            pose = torch.as_tensor(params[:72], dtype=torch.float64)[None]
            betas = torch.as_tensor(params[72:82], dtype=torch.float64)[None]
            cam = torch.as_tensor(params[82:], dtype=torch.float64)[None]
            with torch.no_grad():
                verts = lbs_forward(pose, betas, bt)
                maps = render_maps(verts, bt.faces, cam, self.render)
            cached = maps[0].permute(1, 2, 0).numpy().reshape(-1)
            self._cache[key] = cached
        return cached

    def background_flat(self) -> np.ndarray:
        return background_map(self.render.resolution).reshape(-1)


def _element_features(arr: np.ndarray, space: str, ctx: Optional[RenderContext]) -> np.ndarray:
    if space == "param":
        return arr
    if space == "uv":
        if ctx is None:
            raise InvalidSpec("uv-space costs need a RenderContext")
        return np.stack([ctx.render_flat(row) for row in arr])
    raise InvalidSpec(f"unknown metric space {space!r}")


def _null_reference(space: str, ctx: Optional[RenderContext]) -> np.ndarray:
    if space == "param":
        return np.zeros(PARAM_DIM)
    return ctx.background_flat()


def pairwise_cost(a, b, space: str = "param", ctx: Optional[RenderContext] = None) -> float:
    """Distance between two single-person parameter vectors."""
    fa = np.asarray(a.flat if hasattr(a, "flat") and not isinstance(a, np.ndarray) else a,
                    dtype=np.float64).reshape(1, -1)
    fb = np.asarray(b.flat if hasattr(b, "flat") and not isinstance(b, np.ndarray) else b,
                    dtype=np.float64).reshape(1, -1)
    va = _element_features(fa, space, ctx)[0]
    vb = _element_features(fb, space, ctx)[0]
    return float(np.linalg.norm(va - vb))


def _cost_matrix(feat_a: np.ndarray, feat_b: np.ndarray) -> np.ndarray:
    diff = feat_a[:, None, :] - feat_b[None, :, :]
    return np.sqrt((diff * diff).sum(-1))


def match_sets_features(feat_a: np.ndarray, feat_b: np.ndarray,
                        null_ref: np.ndarray) -> Matching:
    """Assignment over precomputed element features (rows are elements)."""
    na, nb = feat_a.shape[0], feat_b.shape[0]
    if na == 0 or nb == 0:
        raise EmptySet("cannot match an empty set")
    cost = _cost_matrix(feat_a, feat_b)
    size = max(na, nb)
    padded = np.zeros((size, size))
    padded[:na, :nb] = cost
    if nb > na:
        null_cost = np.linalg.norm(feat_b - null_ref[None, :], axis=1)
        padded[na:, :] = null_cost[None, :].repeat(size - na, axis=0)
    elif na > nb:
        null_cost = np.linalg.norm(feat_a - null_ref[None, :], axis=1)
        padded[:, nb:] = null_cost[:, None].repeat(size - nb, axis=1)
    rows, cols = linear_sum_assignment(padded)
    pairs = [(int(r), int(c)) for r, c in zip(rows, cols) if r < na and c < nb]
    matched = float(sum(cost[r, c] for r, c in pairs))
    total = float(padded[rows, cols].sum())
    return Matching(pairs=pairs, matched_cost=matched, penalty=total - matched)


def match_sets(a: ShapeSet, b: ShapeSet, space: str = "param",
               ctx: Optional[RenderContext] = None) -> Matching:
    """Optimal injective matching between two shape sets."""
    feat_a = _element_features(a.to_array(), space, ctx)
    feat_b = _element_features(b.to_array(), space, ctx)
    return match_sets_features(feat_a, feat_b, _null_reference(space, ctx))


def mean_pairwise_text_distance(samples: Sequence[Sample]) -> float:
    """Mean embedding distance over unordered caption pairs (generator free)."""
    n = len(samples)
    if n < 2:
        return 0.0
    total = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            total += text_distance(samples[i].embeddings, samples[j].embeddings)
    return total / (n * (n - 1) / 2)


def eval_metrics(generated: Sequence[ShapeSet], samples: Sequence[Sample],
                 spaces: Sequence[str] = ("param",),
                 ctx: Optional[RenderContext] = None) -> SetMetrics:
    """Aggregate distances for one generated set per sampled caption.

    The nearest-neighbor pool is exactly the sampled captions' own real
    sets, so each caption's ground truth is always a candidate and
    ``d_nn <= d_gt`` holds per sample.
    """
    if len(generated) != len(samples):
        raise InvalidSpec(f"{len(generated)} generated sets for {len(samples)} captions")
    if not samples:
        raise EmptySet("no captions sampled for evaluation")
    for space in spaces:
        if space not in SPACES:
            raise InvalidSpec(f"unknown metric space {space!r}")

    values: dict[str, float] = {}
    for space in spaces:
        null_ref = _null_reference(space, ctx)
        pool = [_element_features(s.gt.to_array(), space, ctx) for s in samples]
        gen_feats = [_element_features(g.to_array(), space, ctx) for g in generated]
        d_nn_sum = d_gt_sum = d_t_sum = 0.0
        for i, gen in enumerate(gen_feats):
            costs = np.array([match_sets_features(gen, real, null_ref).cost for real in pool])
            nn_idx = int(np.argmin(costs))
            d_nn_sum += float(costs[nn_idx])
            d_gt_sum += float(costs[i])
            d_t_sum += text_distance(samples[i].embeddings, samples[nn_idx].embeddings)
        n = len(samples)
        values[f"d_nn_{space}"] = d_nn_sum / n
        values[f"d_gt_{space}"] = d_gt_sum / n
        values[f"d_t_pnn_{space}"] = d_t_sum / n

    return SetMetrics(
        d_nn_param=values.get("d_nn_param", float("nan")),
        d_gt_param=values.get("d_gt_param", float("nan")),
        d_t_pnn_param=values.get("d_t_pnn_param", float("nan")),
        d_t_all=mean_pairwise_text_distance(samples),
        d_nn_uv=values.get("d_nn_uv"),
        d_gt_uv=values.get("d_gt_uv"),
        d_t_pnn_uv=values.get("d_t_pnn_uv"),
        sample_n=len(samples),
    )


def format_metrics_tables(rows: Sequence[tuple[str, SetMetrics]]) -> str:
    """Two-table layout: parameter-space distances, then UV-space distances."""
    def fmt(v) -> str:
        return "-" if v is None else f"{v:.4f}"

    lines = ["parameter distance | text distance",
             f"{'':24s} {'d_nn_p':>10s} {'d_gt_p':>10s} {'d_t_pnn':>10s} {'d_t_all':>10s}"]
    for label, m in rows:
        lines.append(f"{label:24s} {fmt(m.d_nn_param):>10s} {fmt(m.d_gt_param):>10s} "
                     f"{fmt(m.d_t_pnn_param):>10s} {fmt(m.d_t_all):>10s}")
    lines.append("")
    lines.append("UV distance | text distance")
    lines.append(f"{'':24s} {'d_nn_r':>10s} {'d_gt_r':>10s} {'d_t_pnn':>10s} {'d_t_all':>10s}")
    for label, m in rows:
        lines.append(f"{label:24s} {fmt(m.d_nn_uv):>10s} {fmt(m.d_gt_uv):>10s} "
                     f"{fmt(m.d_t_pnn_uv):>10s} {fmt(m.d_t_all):>10s}")
    return "\n".join(lines) + "\n"
