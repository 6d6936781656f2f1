"""Weak-perspective projection and differentiable soft rasterization.

Each person is rendered to a fixed-resolution 3-channel map:

* channel 0 - silhouette occupancy (soft-OR of per-face coverage),
* channel 1 - depth, normalized as ``clamp(0.5 + z / 4, 0, 1)``,
* channel 2 - vertical body coordinate, the posed mesh's own y extent
  mapped to [0, 1].

Background pixels are exactly ``(0, 0.5, 0.5)``.  Coverage is a sigmoid of
the signed distance to the triangle (sharpness ``tau``); overlapping faces
are combined per pixel with a coverage-masked softmax over nearness
``-z / gamma``.  Everything is differentiable with respect to vertices and
camera.  Shading is double sided; there is no backface culling.

Image convention: normalized device coordinates in [-1, 1], +u right and
+v up, sampled at pixel centers with row 0 at v = +1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .config import RenderConfig
from .errors import ConfigError, NonFiniteResult

BACKGROUND = (0.0, 0.5, 0.5)

# Coverage this far into a sigmoid tail (< 9e-27) is snapped to exact zero so
# off-screen geometry produces bit-exact background pixels.
_COVERAGE_CUTOFF = -60.0
_NEG_SENTINEL = -1e30


@dataclass
class RenderedMap:
    """H x W x 3 float map in [0, 1] (see module docstring for channels)."""

    image: np.ndarray

    @property
    def resolution(self) -> int:
        return int(self.image.shape[0])

    def validate(self) -> None:
        if self.image.ndim != 3 or self.image.shape[2] != 3 \
                or self.image.shape[0] != self.image.shape[1]:
            raise NonFiniteResult(f"rendered map must be (H, H, 3), got {self.image.shape}")
        if not np.isfinite(self.image).all():
            raise NonFiniteResult("rendered map contains non-finite values")
        if self.image.min() < 0 or self.image.max() > 1:
            raise NonFiniteResult("rendered map values fall outside [0, 1]")


def project_weak_perspective(vertices, camera):
    """(u, v) = scale * (x + t_x, y + t_y); depth = z, passed through.

    Accepts torch tensors (batched or not) or numpy arrays; returns the
    matching kind.  Shapes: vertices (..., N, 3), camera (..., 3) ->
    points (..., N, 2), depth (..., N).
    """
    was_numpy = isinstance(vertices, np.ndarray)
    v = torch.as_tensor(vertices, dtype=torch.float64) if was_numpy else vertices
    c = torch.as_tensor(camera, dtype=v.dtype) if not isinstance(camera, torch.Tensor) else camera
    scale = c[..., 0:1].unsqueeze(-2)
    shift = c[..., 1:3].unsqueeze(-2)
    points = scale * (v[..., :2] + shift)
    depth = v[..., 2]
    if was_numpy:
        return points.numpy(), depth.numpy()
    return points, depth


def _pixel_grid(resolution: int, dtype: torch.dtype) -> tuple[torch.Tensor, torch.Tensor]:
    step = 2.0 / resolution
    xs = -1.0 + step * (torch.arange(resolution, dtype=dtype) + 0.5)
    ys = 1.0 - step * (torch.arange(resolution, dtype=dtype) + 0.5)
    py, px = torch.meshgrid(ys, xs, indexing="ij")
    return px.reshape(-1), py.reshape(-1)


def _chunk_geometry(uv, z, vc, faces, px, py, tau):
    """Per face-chunk coverage and interpolated attributes.

    Returns (coverage, nearness_logit_gamma_free, depth_value, vert_value),
    each (B, Fc, P).  The nearness logit is the raw interpolated z; callers
    divide by the temperature.
    """
    tri = uv[:, faces, :]                                    # (B, Fc, 3, 2)
    triz = z[:, faces]                                       # (B, Fc, 3)
    trivc = vc[:, faces]

    crosses = []
    inv_lens = []
    for i in range(3):
        a = tri[:, :, i, :]
        b = tri[:, :, (i + 1) % 3, :]
        e = b - a                                            # (B, Fc, 2)
        inv_lens.append(torch.rsqrt(torch.clamp((e * e).sum(-1), min=1e-24)))
        cross = e[..., 0:1] * (py - a[..., 1:2]) - e[..., 1:2] * (px - a[..., 0:1])
        crosses.append(cross)                                # (B, Fc, P)

    e01 = tri[:, :, 1, :] - tri[:, :, 0, :]
    e02 = tri[:, :, 2, :] - tri[:, :, 0, :]
    area2 = e01[..., 0] * e02[..., 1] - e01[..., 1] * e02[..., 0]
    orient = torch.where(area2 >= 0, torch.ones_like(area2), -torch.ones_like(area2))
    orient = orient.unsqueeze(-1)                            # (B, Fc, 1)

    d0 = orient * crosses[0] * inv_lens[0].unsqueeze(-1)
    d1 = orient * crosses[1] * inv_lens[1].unsqueeze(-1)
    d2 = orient * crosses[2] * inv_lens[2].unsqueeze(-1)
    signed_dist = torch.minimum(torch.minimum(d0, d1), d2)

    arg = tau * signed_dist
    coverage = torch.where(arg > _COVERAGE_CUTOFF, torch.sigmoid(arg), torch.zeros_like(arg))

    # cross_i is twice the area of (v_i, v_{i+1}, p): the barycentric weight
    # of the opposite vertex v_{i+2}.  Clip-and-renormalize for pixels
    # outside the face.
    w2 = torch.clamp(orient * crosses[0], min=0.0)
    w0 = torch.clamp(orient * crosses[1], min=0.0)
    w1 = torch.clamp(orient * crosses[2], min=0.0)
    norm = w0 + w1 + w2 + 1e-12
    z_pix = (w0 * triz[:, :, 0:1] + w1 * triz[:, :, 1:2] + w2 * triz[:, :, 2:3]) / norm
    vc_pix = (w0 * trivc[:, :, 0:1] + w1 * trivc[:, :, 1:2] + w2 * trivc[:, :, 2:3]) / norm

    depth_value = torch.clamp(0.5 + z_pix / 4.0, 0.0, 1.0)
    return coverage, z_pix, depth_value, vc_pix


def render_maps(vertices: torch.Tensor, faces: torch.Tensor, cameras: torch.Tensor,
                cfg: RenderConfig) -> torch.Tensor:
    """Batched soft rasterization: (B, N, 3) meshes -> (B, 3, R, R) maps."""
    cfg.validate()
    if not torch.isfinite(vertices).all() or not torch.isfinite(cameras).all():
        raise NonFiniteResult("render inputs contain non-finite values")
    batch, _, _ = vertices.shape
    res = cfg.resolution
    dtype = vertices.dtype
    n_pix = res * res
    n_faces = int(faces.shape[0])

    uv, z = project_weak_perspective(vertices, cameras)
    y = vertices[..., 1]
    y_min = y.min(dim=1, keepdim=True).values
    y_max = y.max(dim=1, keepdim=True).values
    vc = (y - y_min) / torch.clamp(y_max - y_min, min=1e-9)

    px, py = _pixel_grid(res, dtype)
    px = px.to(vertices.device)
    py = py.to(vertices.device)

    chunk = max(1, cfg.pixel_face_budget // max(1, n_pix))
    slices = [slice(s, min(s + chunk, n_faces)) for s in range(0, n_faces, chunk)]
    tau = cfg.sharpness
    gamma = cfg.depth_temperature

    single = len(slices) == 1
    cached = None
    running_max = torch.full((batch, n_pix), _NEG_SENTINEL, dtype=dtype, device=vertices.device)
    for sl in slices:
        cov, z_pix, dval, vcval = _chunk_geometry(uv, z, vc, faces[sl], px, py, tau)
        logit = -z_pix / gamma
        masked = torch.where(cov > 0, logit, torch.full_like(logit, _NEG_SENTINEL))
        running_max = torch.maximum(running_max, masked.max(dim=1).values)
        if single:
            cached = (cov, logit, dval, vcval)
    ref = torch.where(running_max <= _NEG_SENTINEL / 2,
                      torch.zeros_like(running_max), running_max).detach()

    weight_sum = torch.zeros((batch, n_pix), dtype=dtype, device=vertices.device)
    depth_acc = torch.zeros_like(weight_sum)
    vert_acc = torch.zeros_like(weight_sum)
    miss_prod = torch.ones_like(weight_sum)
    for sl in slices:
        if single:
            cov, logit, dval, vcval = cached
        else:
            cov, z_pix, dval, vcval = _chunk_geometry(uv, z, vc, faces[sl], px, py, tau)
            logit = -z_pix / gamma
        m = cov * torch.exp(torch.clamp(logit - ref.unsqueeze(1), max=0.0))
        weight_sum = weight_sum + m.sum(dim=1)
        depth_acc = depth_acc + (m * dval).sum(dim=1)
        vert_acc = vert_acc + (m * vcval).sum(dim=1)
        miss_prod = miss_prod * (1.0 - cov).prod(dim=1)

    silhouette = 1.0 - miss_prod
    denom = weight_sum + 1e-12
    depth_fg = depth_acc / denom
    vert_fg = vert_acc / denom
    depth_ch = silhouette * depth_fg + (1.0 - silhouette) * BACKGROUND[1]
    vert_ch = silhouette * vert_fg + (1.0 - silhouette) * BACKGROUND[2]

    out = torch.stack([silhouette, depth_ch, vert_ch], dim=1)
    return out.reshape(batch, 3, res, res)


def render_map(mesh, camera, resolution: int = 224, cfg: RenderConfig | None = None) -> RenderedMap:
    """Render one mesh to an H x W x 3 numpy map."""
    if cfg is None:
        cfg = RenderConfig(resolution=resolution)
    if cfg.resolution < 8:
        raise ConfigError("render resolution must be >= 8")
    verts = torch.as_tensor(mesh.vertices, dtype=torch.float64)[None]
    faces = torch.as_tensor(mesh.faces, dtype=torch.long)
    cam = torch.as_tensor(np.asarray(camera, dtype=np.float64))[None]
    maps = render_maps(verts, faces, cam, cfg)
    image = maps[0].permute(1, 2, 0).numpy()
    rendered = RenderedMap(image=image)
    rendered.validate()
    return rendered


def background_map(resolution: int) -> np.ndarray:
    image = np.empty((resolution, resolution, 3), dtype=np.float64)
    image[:] = BACKGROUND
    return image


def composite_by_depth(maps: list[np.ndarray]) -> np.ndarray:
    """Painter's-algorithm preview of several per-person maps.

    Display only; training and evaluation always consume per-person maps.
    Persons are sorted far to near by their silhouette-weighted mean depth
    and alpha blended with the silhouette channel.
    """
    if not maps:
        raise ValueError("need at least one map to composite")
    res = maps[0].shape[0]
    order = []
    for i, m in enumerate(maps):
        sil = m[..., 0]
        weight = sil.sum()
        mean_depth = (sil * m[..., 1]).sum() / weight if weight > 1e-9 else 1.0
        order.append((mean_depth, i))
    out = background_map(res)
    for _, i in sorted(order, reverse=True):
        alpha = maps[i][..., 0:1]
        out = (1.0 - alpha) * out + alpha * maps[i]
    return out


def save_png(image: np.ndarray, path) -> None:
    """8-bit PNG with exact quantization floor(255 * v + 0.5)."""
    from PIL import Image

    arr = np.asarray(image, dtype=np.float64)
    quant = np.floor(255.0 * np.clip(arr, 0.0, 1.0) + 0.5).astype(np.uint8)
    Image.fromarray(quant, mode="RGB").save(path, format="PNG")


def save_obj(mesh, path) -> None:
    """ASCII OBJ with v/f records (1-based indices)."""
    with open(path, "w", encoding="ascii") as fh:
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for f in mesh.faces:
            fh.write(f"f {int(f[0]) + 1} {int(f[1]) + 1} {int(f[2]) + 1}\n")
