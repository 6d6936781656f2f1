"""Differentiable parametric body: shape blend, axis-angle kinematics, LBS.

A body is described by an 85-vector per person: 72 pose entries (24 joints
x 3 axis-angle components), 10 shape coefficients and 3 weak-perspective
camera values (scale, t_x, t_y).  The mesh function consumes pose and shape
only; the camera belongs to the renderer.

Assets may come from a real SMPL-derived export (N_v = 6890) or from
:func:`make_toy_body`, a procedural capsule figure that keeps the whole
pipeline runnable without licensed model files.  Bodies with fewer than 24
joints read only the first ``3 * num_joints`` pose entries; the rest of the
pose vector is accepted and ignored.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np
import torch

from . import container
from .config import ToyBodySpec
from .errors import EmptySet, InvalidSpec, MalformedAsset, MalformedRecord, MissingAsset, NonFiniteResult

POSE_DIM = 72
SHAPE_DIM = 10
CAMERA_DIM = 3
PARAM_DIM = POSE_DIM + SHAPE_DIM + CAMERA_DIM
MAX_JOINTS = POSE_DIM // 3
SHAPE_BASIS_DIM = 10

ASSET_FORMAT = "body-assets"


@dataclass
class SmplParams:
    """One person: pose (72, axis-angle radians), shape (10), camera (3)."""

    pose: np.ndarray
    shape: np.ndarray
    camera: np.ndarray

    def __post_init__(self):
        self.pose = np.asarray(self.pose, dtype=np.float64)
        self.shape = np.asarray(self.shape, dtype=np.float64)
        self.camera = np.asarray(self.camera, dtype=np.float64)

    @classmethod
    def zeros(cls) -> "SmplParams":
        return cls(np.zeros(POSE_DIM), np.zeros(SHAPE_DIM), np.zeros(CAMERA_DIM))

    @classmethod
    def from_flat(cls, flat: np.ndarray) -> "SmplParams":
        flat = np.asarray(flat, dtype=np.float64).reshape(-1)
        if flat.shape[0] != PARAM_DIM:
            raise MalformedRecord(f"flat parameter vector must have length {PARAM_DIM}, got {flat.shape[0]}")
        return cls(flat[:POSE_DIM].copy(),
                   flat[POSE_DIM:POSE_DIM + SHAPE_DIM].copy(),
                   flat[POSE_DIM + SHAPE_DIM:].copy())

    @property
    def flat(self) -> np.ndarray:
        return np.concatenate([self.pose, self.shape, self.camera])

    def validate(self) -> None:
        if self.pose.shape != (POSE_DIM,) or self.shape.shape != (SHAPE_DIM,) \
                or self.camera.shape != (CAMERA_DIM,):
            raise MalformedRecord(
                f"parameter shapes must be ({POSE_DIM},), ({SHAPE_DIM},), ({CAMERA_DIM},); "
                f"got {self.pose.shape}, {self.shape.shape}, {self.camera.shape}")
        if not np.isfinite(self.flat).all():
            raise MalformedRecord("parameters contain non-finite entries")
        magnitudes = np.linalg.norm(self.pose.reshape(MAX_JOINTS, 3), axis=1)
        if (magnitudes > 2 * np.pi).any():
            warnings.warn("per-joint axis-angle magnitude exceeds 2*pi", stacklevel=2)


class ShapeSet:
    """Ordered, non-empty sequence of per-person parameters."""

    def __init__(self, elements: Sequence[SmplParams]):
        elements = list(elements)
        if not elements:
            raise EmptySet("a shape set must contain at least one element")
        self.elements = elements

    def __len__(self) -> int:
        return len(self.elements)

    def __iter__(self) -> Iterator[SmplParams]:
        return iter(self.elements)

    def __getitem__(self, idx: int) -> SmplParams:
        return self.elements[idx]

    def to_array(self) -> np.ndarray:
        return np.stack([p.flat for p in self.elements])

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "ShapeSet":
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != PARAM_DIM:
            raise MalformedRecord(f"shape-set array must be (k, {PARAM_DIM}), got {arr.shape}")
        return cls([SmplParams.from_flat(row) for row in arr])

    def validate(self, k_max: Optional[int] = None) -> None:
        if k_max is not None and len(self) > k_max:
            raise MalformedRecord(f"shape set has {len(self)} elements, k_max is {k_max}")
        for p in self.elements:
            p.validate()


@dataclass
class BodyTensors:
    """Torch view of the assets, created once per dtype and reused."""

    template: torch.Tensor
    faces: torch.Tensor
    joint_regressor: torch.Tensor
    skin_weights: torch.Tensor
    shape_basis: torch.Tensor
    pose_basis: Optional[torch.Tensor]
    parents: list[int]


@dataclass
class BodyModelAssets:
    template: np.ndarray            # (N, 3) meters
    faces: np.ndarray               # (F, 3) vertex indices
    joint_regressor: np.ndarray     # (J, N)
    skin_weights: np.ndarray        # (N, J), rows sum to 1
    shape_basis: np.ndarray         # (N, 3, 10)
    parents: np.ndarray             # (J,), parents[0] == -1
    pose_basis: Optional[np.ndarray] = None   # (N, 3, 9*(J-1))
    source: str = "external"
    toy_spec: Optional[dict] = None
    _torch_cache: dict = field(default_factory=dict, repr=False)

    @property
    def num_vertices(self) -> int:
        return int(self.template.shape[0])

    @property
    def num_joints(self) -> int:
        return int(self.parents.shape[0])

    @property
    def num_faces(self) -> int:
        return int(self.faces.shape[0])

    def validate(self) -> None:
        n, j = self.num_vertices, self.num_joints
        if self.template.ndim != 2 or self.template.shape[1] != 3:
            raise MalformedAsset("template must be (N, 3)")
        if not np.isfinite(self.template).all():
            raise MalformedAsset("template contains non-finite vertices")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise MalformedAsset("faces must be (F, 3)")
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= n):
            raise MalformedAsset("face indices out of range [0, N_v)")
        if self.joint_regressor.shape != (j, n):
            raise MalformedAsset(f"joint_regressor must be (J, N) = ({j}, {n})")
        if self.skin_weights.shape != (n, j):
            raise MalformedAsset(f"skin_weights must be (N, J) = ({n}, {j})")
        if (self.skin_weights < 0).any():
            raise MalformedAsset("skin_weights must be nonnegative")
        row_sums = self.skin_weights.sum(axis=1)
        if not np.allclose(row_sums, 1.0, atol=1e-6):
            raise MalformedAsset("skin_weights rows must sum to 1 within 1e-6")
        if self.shape_basis.shape != (n, 3, SHAPE_BASIS_DIM):
            raise MalformedAsset(f"shape_basis must be (N, 3, {SHAPE_BASIS_DIM})")
        if self.pose_basis is not None and self.pose_basis.shape != (n, 3, 9 * (j - 1)):
            raise MalformedAsset(f"pose_basis must be (N, 3, {9 * (j - 1)})")
        if j < 2 or j > MAX_JOINTS:
            raise MalformedAsset(f"joint count must be in [2, {MAX_JOINTS}]")
        if int(self.parents[0]) != -1:
            raise MalformedAsset("parents[0] must be -1 (single root)")
        if (self.parents[1:] < 0).any():
            raise MalformedAsset("kinematic tree must have exactly one root")
        # Acyclic check: every joint must reach the root.
        for start in range(1, j):
            seen, cur = set(), start
            while cur != -1:
                if cur in seen:
                    raise MalformedAsset("kinematic tree contains a cycle")
                seen.add(cur)
                cur = int(self.parents[cur])

    def to_torch(self, dtype: torch.dtype = torch.float64) -> BodyTensors:
        key = str(dtype)
        if key not in self._torch_cache:
            self._torch_cache[key] = BodyTensors(
                template=torch.as_tensor(self.template, dtype=dtype),
                faces=torch.as_tensor(self.faces, dtype=torch.long),
                joint_regressor=torch.as_tensor(self.joint_regressor, dtype=dtype),
                skin_weights=torch.as_tensor(self.skin_weights, dtype=dtype),
                shape_basis=torch.as_tensor(self.shape_basis, dtype=dtype),
                pose_basis=None if self.pose_basis is None
                else torch.as_tensor(self.pose_basis, dtype=dtype),
                parents=[int(p) for p in self.parents],
            )
        return self._torch_cache[key]


@dataclass
class BodyMesh:
    vertices: np.ndarray
    faces: np.ndarray


def save_body_assets(assets: BodyModelAssets, path) -> None:
    assets.validate()
    meta = {
        "num_vertices": assets.num_vertices,
        "num_joints": assets.num_joints,
        "num_faces": assets.num_faces,
        "asset_version": 1,
        "source": assets.source,
        "toy_spec": assets.toy_spec,
        "has_pose_basis": assets.pose_basis is not None,
    }
    arrays = {
        "template": assets.template.astype(np.float64),
        "faces": assets.faces.astype(np.int64),
        "joint_regressor": assets.joint_regressor.astype(np.float64),
        "skin_weights": assets.skin_weights.astype(np.float64),
        "shape_basis": assets.shape_basis.astype(np.float64),
        "parents": assets.parents.astype(np.int64),
    }
    if assets.pose_basis is not None:
        arrays["pose_basis"] = assets.pose_basis.astype(np.float64)
    container.save(path, ASSET_FORMAT, meta, arrays)


def load_body_assets(path) -> BodyModelAssets:
    try:
        meta, arrays = container.load(path, ASSET_FORMAT)
    except MissingFile as exc:
        raise MissingAsset(str(exc)) from exc
    except MalformedRecord as exc:
        raise MalformedAsset(str(exc)) from exc
    try:
        assets = BodyModelAssets(
            template=arrays["template"],
            faces=arrays["faces"],
            joint_regressor=arrays["joint_regressor"],
            skin_weights=arrays["skin_weights"],
            shape_basis=arrays["shape_basis"],
            parents=arrays["parents"],
            pose_basis=arrays.get("pose_basis"),
            source=meta.get("source", "external"),
            toy_spec=meta.get("toy_spec"),
        )
    except KeyError as exc:
        raise MalformedAsset(f"asset file missing array {exc}") from exc
    assets.validate()
    declared = (meta.get("num_vertices"), meta.get("num_joints"), meta.get("num_faces"))
    actual = (assets.num_vertices, assets.num_joints, assets.num_faces)
    if declared != actual:
        raise MalformedAsset(f"header counts {declared} disagree with arrays {actual}")
    return assets


def _segment_distances(points: np.ndarray, seg_a: np.ndarray, seg_b: np.ndarray) -> np.ndarray:
    """Distance from each point (N, 3) to each segment (J, 3)-(J, 3) -> (N, J)."""
    d = seg_b - seg_a                                   # (J, 3)
    rel = points[:, None, :] - seg_a[None, :, :]        # (N, J, 3)
    denom = np.maximum((d * d).sum(-1), 1e-12)
    t = np.clip((rel * d[None]).sum(-1) / denom, 0.0, 1.0)
    closest = seg_a[None] + t[..., None] * d[None]
    return np.linalg.norm(points[:, None, :] - closest, axis=-1)


def make_toy_body(num_vertices: int, num_joints: int, seed: int = 0) -> BodyModelAssets:
    """Procedural articulated capsule figure with smooth skinning.

    Deterministic in (num_vertices, num_joints, seed).  The figure is a
    tube of 4-vertex rings along +y with a seeded radius profile; up to
    three leftover vertices become cap centers (the third, if present, is
    unreferenced filler so the requested vertex count is honored exactly).
    """
    if num_joints < 2:
        raise InvalidSpec("num_joints must be >= 2")
    if num_joints > MAX_JOINTS:
        raise InvalidSpec(f"num_joints must be <= {MAX_JOINTS} (pose vector covers 24 joints)")
    if num_vertices < 4 * num_joints:
        raise InvalidSpec("num_vertices must be >= 4 * num_joints")

    rng = np.random.default_rng(np.random.PCG64(seed))
    ring_size = 4
    levels = num_vertices // ring_size
    leftover = num_vertices % ring_size
    height = 1.6

    ys = np.linspace(0.0, height, levels)
    base_radius = 0.12 + 0.08 * np.sin(np.pi * ys / height)
    wobble = 0.02 * np.sin(2 * np.pi * ys / height + rng.uniform(0, 2 * np.pi))
    radii = base_radius + wobble
    angles = 2 * np.pi * (np.arange(ring_size) + 0.5) / ring_size

    verts = np.zeros((num_vertices, 3))
    for lvl in range(levels):
        for i in range(ring_size):
            verts[lvl * ring_size + i] = (radii[lvl] * np.cos(angles[i]), ys[lvl],
                                          radii[lvl] * np.sin(angles[i]))
    extra_positions = [(0.0, -0.02, 0.0), (0.0, height + 0.02, 0.0), (0.01, height + 0.03, 0.0)]
    for e in range(leftover):
        verts[levels * ring_size + e] = extra_positions[e]

    faces = []
    for lvl in range(levels - 1):
        for i in range(ring_size):
            a = lvl * ring_size + i
            b = lvl * ring_size + (i + 1) % ring_size
            c = (lvl + 1) * ring_size + i
            d = (lvl + 1) * ring_size + (i + 1) % ring_size
            faces.append((a, c, d))
            faces.append((a, d, b))
    if leftover >= 1:
        bottom = levels * ring_size
        for i in range(ring_size):
            faces.append((bottom, (i + 1) % ring_size, i))
    if leftover >= 2:
        top = levels * ring_size + 1
        first = (levels - 1) * ring_size
        for i in range(ring_size):
            faces.append((top, first + i, first + (i + 1) % ring_size))
    faces_arr = np.asarray(faces, dtype=np.int64)

    joint_y = np.linspace(0.08, height - 0.12, num_joints)
    joints = np.stack([np.zeros(num_joints), joint_y, np.zeros(num_joints)], axis=1)
    seg_a = joints.copy()
    seg_b = np.vstack([joints[1:], joints[-1:] + np.array([0.0, 0.18, 0.0])])
    seg_len = float(np.mean(np.linalg.norm(seg_b - seg_a, axis=1)))

    dist = _segment_distances(verts, seg_a, seg_b)
    skin = np.exp(-((dist / (0.5 * seg_len)) ** 2))
    skin /= skin.sum(axis=1, keepdims=True)

    joint_dist = np.linalg.norm(verts[None, :, :] - joints[:, None, :], axis=-1)
    regressor = np.exp(-((joint_dist / (0.35 * seg_len)) ** 2))
    regressor /= regressor.sum(axis=1, keepdims=True)

    center = verts.mean(axis=0)
    basis = np.zeros((num_vertices, 3, SHAPE_BASIS_DIM))
    basis[:, :, 0] = 0.10 * (verts - center)
    basis[:, 1, 1] = 0.15 * (verts[:, 1] - center[1])
    basis[:, 0, 2] = 0.10 * verts[:, 0]
    basis[:, 2, 3] = 0.10 * verts[:, 2]
    radial = verts - np.array([0.0, 1.0, 0.0]) * verts[:, 1:2]
    radial_norm = np.linalg.norm(radial, axis=1, keepdims=True)
    radial_dir = np.where(radial_norm > 1e-9, radial / np.maximum(radial_norm, 1e-9), 0.0)
    for k in range(4, SHAPE_BASIS_DIM):
        amp = rng.normal(size=3) * 0.04
        phase = rng.uniform(0, 2 * np.pi, size=3)
        profile = sum(amp[h] * np.sin((h + 1) * np.pi * verts[:, 1] / height + phase[h])
                      for h in range(3))
        basis[:, :, k] = profile[:, None] * radial_dir
        basis[:, 1, k] += 0.02 * rng.normal() * np.sin(np.pi * verts[:, 1] / height)

    parents = np.arange(-1, num_joints - 1, dtype=np.int64)
    assets = BodyModelAssets(
        template=verts, faces=faces_arr, joint_regressor=regressor,
        skin_weights=skin, shape_basis=basis, parents=parents,
        pose_basis=None, source="toy",
        toy_spec={"num_vertices": num_vertices, "num_joints": num_joints, "seed": seed},
    )
    assets.validate()
    return assets


def toy_body_from_spec(spec: ToyBodySpec) -> BodyModelAssets:
    return make_toy_body(spec.num_vertices, spec.num_joints, spec.seed)


def axis_angle_to_matrix(aa: torch.Tensor) -> torch.Tensor:
    """Exponential map (..., 3) -> (..., 3, 3) with a Taylor branch near 0.

    R = I + (sin a / a) K + ((1 - cos a) / a^2) K^2 with K = skew(aa); both
    coefficient factors switch to their series below ``a < 1e-8`` so the map
    and its gradient are exact at the rest pose.
    """
    a2 = (aa * aa).sum(dim=-1, keepdim=True)
    a = torch.sqrt(torch.clamp(a2, min=1e-30))
    small = a < 1e-8
    a_safe = torch.where(small, torch.ones_like(a), a)
    sin_term = torch.where(small, 1.0 - a2 / 6.0, torch.sin(a_safe) / a_safe)
    cos_term = torch.where(small, 0.5 - a2 / 24.0, (1.0 - torch.cos(a_safe)) / (a_safe * a_safe))

    x, y, z = aa[..., 0], aa[..., 1], aa[..., 2]
    zero = torch.zeros_like(x)
    k = torch.stack([
        torch.stack([zero, -z, y], dim=-1),
        torch.stack([z, zero, -x], dim=-1),
        torch.stack([-y, x, zero], dim=-1),
    ], dim=-2)
    eye = torch.eye(3, dtype=aa.dtype, device=aa.device).expand(k.shape)
    return eye + sin_term[..., None] * k + cos_term[..., None] * (k @ k)


def lbs_forward(pose: torch.Tensor, betas: torch.Tensor, bt: BodyTensors) -> torch.Tensor:
    """Batched mesh function: pose (B, 72), betas (B, 10) -> vertices (B, N, 3).

    Differentiable in both arguments.  Joints beyond the asset's joint count
    do not exist; the corresponding pose entries are ignored.
    """
    num_joints = len(bt.parents)
    batch = pose.shape[0]
    v_shaped = bt.template[None] + torch.einsum("ndk,bk->bnd", bt.shape_basis, betas)
    joints = torch.einsum("jn,bnd->bjd", bt.joint_regressor, v_shaped)

    aa = pose[:, :3 * num_joints].reshape(batch, num_joints, 3)
    rot = axis_angle_to_matrix(aa)                      # (B, J, 3, 3)

    if bt.pose_basis is not None:
        eye = torch.eye(3, dtype=pose.dtype, device=pose.device)
        feat = (rot[:, 1:] - eye).reshape(batch, -1)
        v_posed = v_shaped + torch.einsum("ndk,bk->bnd", bt.pose_basis, feat)
    else:
        v_posed = v_shaped

    # Forward kinematics along the parent table.
    world_rot = [None] * num_joints
    world_t = [None] * num_joints
    world_rot[0] = rot[:, 0]
    world_t[0] = joints[:, 0]
    for j in range(1, num_joints):
        p = bt.parents[j]
        local_t = joints[:, j] - joints[:, p]
        world_rot[j] = world_rot[p] @ rot[:, j]
        world_t[j] = (world_rot[p] @ local_t[..., None])[..., 0] + world_t[p]
    rot_stack = torch.stack(world_rot, dim=1)           # (B, J, 3, 3)
    t_stack = torch.stack(world_t, dim=1)               # (B, J, 3)

    # Remove the rest-pose joint location so rest pose maps to identity.
    t_skin = t_stack - (rot_stack @ joints[..., None])[..., 0]
    rot_v = torch.einsum("nj,bjde->bnde", bt.skin_weights, rot_stack)
    t_v = torch.einsum("nj,bjd->bnd", bt.skin_weights, t_skin)
    return (rot_v @ v_posed[..., None])[..., 0] + t_v


def smpl_forward(params: SmplParams, assets: BodyModelAssets,
                 dtype: torch.dtype = torch.float64) -> BodyMesh:
    """Single-person mesh; camera parameters are not consumed here."""
    params.validate()
    bt = assets.to_torch(dtype)
    pose = torch.as_tensor(params.pose, dtype=dtype)[None]
    betas = torch.as_tensor(params.shape, dtype=dtype)[None]
    verts = lbs_forward(pose, betas, bt)[0]
    out = verts.detach().cpu().numpy()
    if not np.isfinite(out).all():
        raise NonFiniteResult("mesh function produced non-finite vertices")
    return BodyMesh(vertices=out, faces=assets.faces)
