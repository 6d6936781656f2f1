"""Caption / embedding / ground-truth-set samples.

Two sources share one manifest format: a deterministic synthetic generator
(activity clusters with captions like "three people standing") and an
ingestion path for externally produced pseudo ground truth (body fits
estimated from images by a pretrained regressor; producing them is out of
scope here).  Ground-truth person ordering is normalized at construction
and load time with :func:`canonical_order`, since the recurrent critics
are order sensitive and training needs a stable convention.

Manifests are byte identical across platforms for a fixed seed: parameters
are quantized to float32 at generation time and stored as raw bytes, and
toy embeddings are recomputed from tokens at load instead of being stored.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import container
from .body_model import PARAM_DIM, ShapeSet, SmplParams
from .config import SynthSpec, config_hash
from .errors import InvalidSpec, MalformedRecord
from .text_encoder import (EmbeddingRecord, ToyEmbedder, WordEmbeddings,
                           encode_caption, tokenize)

MANIFEST_FORMAT = "dataset-manifest"
MANIFEST_VERSION = 1

COUNT_WORDS = ("one", "two", "three", "four", "five", "six", "seven", "eight")


@dataclass
class Sample:
    caption_id: str
    tokens: tuple[str, ...]
    embeddings: WordEmbeddings
    gt: ShapeSet
    split: str = "train"
    image_id: Optional[str] = None

    def validate(self, k_max: int) -> None:
        if self.split not in ("train", "val"):
            raise MalformedRecord(f"sample {self.caption_id!r}: unknown split {self.split!r}")
        self.embeddings.validate()
        self.gt.validate(k_max)


@dataclass
class DatasetManifest:
    k_max: int
    embedder_spec: dict
    samples: list[Sample]
    extra: dict = field(default_factory=dict)
    version: int = MANIFEST_VERSION

    def split(self, name: str) -> list[Sample]:
        return [s for s in self.samples if s.split == name]

    def validate(self) -> None:
        if self.k_max < 1:
            raise MalformedRecord("manifest k_max must be >= 1")
        bad = []
        for i, sample in enumerate(self.samples):
            try:
                sample.validate(self.k_max)
            except MalformedRecord as exc:
                bad.append(f"record {i} ({sample.caption_id}): {exc}")
        if bad:
            raise MalformedRecord("; ".join(bad))


def canonical_order(shape_set: ShapeSet) -> ShapeSet:
    """Stable sort by camera t_x, then t_y, then the flattened vector."""
    def key(idx: int):
        p = shape_set[idx]
        return (p.camera[1], p.camera[2], tuple(p.flat))

    order = sorted(range(len(shape_set)), key=key)
    return ShapeSet([shape_set[i] for i in order])


def _count_word(count: int) -> str:
    if not (1 <= count <= len(COUNT_WORDS)):
        raise InvalidSpec(f"count {count} has no spelled-out form")
    return COUNT_WORDS[count - 1]


def _quantize(arr: np.ndarray) -> np.ndarray:
    # Fixed-precision serialization: round-trips through float32 exactly.
    return arr.astype(np.float32).astype(np.float64)


def generate_synthetic_dataset(spec: SynthSpec, seed: int, size: int) -> DatasetManifest:
    """Deterministic caption/shape-set pairs from activity clusters.

    Per-element noise is clipped at three standard deviations, so every
    ground-truth element lies within 3 sigma of its class prototype by
    construction.  Cameras are laid out left to right.
    """
    spec.validate()
    if size < 1:
        raise InvalidSpec("dataset size must be >= 1")
    rng = np.random.Generator(np.random.PCG64(seed))
    embedder = ToyEmbedder(spec.text)

    protos = []
    for _ in spec.classes:
        protos.append((rng.uniform(-spec.pose_range, spec.pose_range, 72),
                       rng.uniform(-spec.shape_range, spec.shape_range, 10)))

    period = max(2, round(1.0 / spec.val_fraction))
    spacing = spec.camera_spread / max(spec.k_max - 1, 1)
    samples = []
    for i in range(size):
        cls_idx = int(rng.integers(len(spec.classes)))
        cls = spec.classes[cls_idx]
        count = int(rng.integers(1, spec.k_max + 1))
        if count == 1:
            caption = cls.caption_template_single.format(activity=cls.name)
        else:
            caption = cls.caption_template.format(count=_count_word(count), activity=cls.name)
        tokens = tuple(tokenize(caption))
        embeddings = encode_caption(tokens, embedder)

        pose_proto, shape_proto = protos[cls_idx]
        elements = []
        for j in range(count):
            pose = pose_proto + np.clip(rng.standard_normal(72), -3, 3) * spec.pose_noise
            shape = shape_proto + np.clip(rng.standard_normal(10), -3, 3) * spec.shape_noise
            t_x = (j - (count - 1) / 2.0) * spacing \
                + np.clip(rng.standard_normal(), -3, 3) * spec.camera_noise
            t_y = np.clip(rng.standard_normal(), -3, 3) * spec.camera_noise
            scale = spec.camera_scale + np.clip(rng.standard_normal(), -3, 3) * spec.camera_noise
            camera = np.array([max(scale, 0.05), t_x, t_y])
            elements.append(SmplParams(_quantize(pose), _quantize(shape), _quantize(camera)))
        gt = canonical_order(ShapeSet(elements))

        samples.append(Sample(
            caption_id=f"synth-{i:06d}",
            tokens=tokens,
            embeddings=embeddings,
            gt=gt,
            split="val" if i % period == 0 else "train",
        ))

    manifest = DatasetManifest(
        k_max=spec.k_max,
        embedder_spec=embedder.spec(),
        samples=samples,
        extra={"source": "synthetic", "seed": seed, "size": size,
               "spec_hash": config_hash(spec)},
    )
    manifest.validate()
    return manifest


def manifest_from_records(records: Sequence[tuple], k_max: int,
                          embedder: ToyEmbedder) -> DatasetManifest:
    """Thin importer for externally produced pseudo ground truth.

    ``records`` are (caption_id, caption_text, image_id, params (k, 85))
    tuples; each caption is its own sample and the image id is retained for
    grouping.  Splits default to train; callers reassign as needed.
    """
    samples = []
    for caption_id, caption, image_id, params in records:
        tokens = tuple(tokenize(caption))
        samples.append(Sample(
            caption_id=caption_id,
            tokens=tokens,
            embeddings=encode_caption(tokens, embedder),
            gt=canonical_order(ShapeSet.from_array(np.asarray(params))),
            split="train",
            image_id=image_id,
        ))
    manifest = DatasetManifest(k_max=k_max, embedder_spec=embedder.spec(), samples=samples,
                               extra={"source": "imported"})
    manifest.validate()
    return manifest


def attach_embeddings(manifest: DatasetManifest,
                      records: Sequence[EmbeddingRecord]) -> DatasetManifest:
    """Replace toy embeddings with precomputed ones (matched by caption id)."""
    by_id = {r.caption_id: r for r in records}
    spec = dict(manifest.embedder_spec)
    new_samples = []
    for sample in manifest.samples:
        rec = by_id.get(sample.caption_id)
        if rec is None:
            raise MalformedRecord(f"no precomputed embedding for caption {sample.caption_id!r}")
        emb = WordEmbeddings(matrix=rec.matrix.astype(np.float64),
                             word_count=rec.word_count, tokens=sample.tokens)
        emb.validate()
        new_samples.append(Sample(sample.caption_id, sample.tokens, emb, sample.gt,
                                  sample.split, sample.image_id))
    spec.update({"kind": "imported"})
    return DatasetManifest(k_max=manifest.k_max, embedder_spec=spec, samples=new_samples,
                           extra={**manifest.extra, "embeddings": "inline"})


def save_manifest(manifest: DatasetManifest, path) -> None:
    manifest.validate()
    sample_meta = []
    flat_params = []
    offsets = [0]
    inline = manifest.embedder_spec.get("kind") != "toy"
    embeddings = []
    for s in manifest.samples:
        sample_meta.append({
            "caption_id": s.caption_id,
            "tokens": list(s.tokens),
            "split": s.split,
            "count": len(s.gt),
            "word_count": s.embeddings.word_count,
            "image_id": s.image_id,
        })
        flat_params.append(s.gt.to_array())
        offsets.append(offsets[-1] + len(s.gt))
        if inline:
            embeddings.append(s.embeddings.matrix)
    meta = {
        "manifest_version": manifest.version,
        "k_max": manifest.k_max,
        "embedder": manifest.embedder_spec,
        "samples": sample_meta,
        "extra": manifest.extra,
    }
    arrays = {
        "gt_params": np.concatenate(flat_params, axis=0).astype(np.float32),
        "gt_offsets": np.asarray(offsets, dtype=np.int64),
    }
    if inline:
        arrays["embeddings"] = np.stack(embeddings).astype(np.float32)
    container.save(path, MANIFEST_FORMAT, meta, arrays)


def load_manifest(path) -> DatasetManifest:
    meta, arrays = container.load(path, MANIFEST_FORMAT)
    embedder_spec = meta["embedder"]
    inline = embedder_spec.get("kind") != "toy"
    embedder = None
    if not inline:
        from .text_encoder import embedder_from_spec
        embedder = embedder_from_spec(embedder_spec)

    params = arrays["gt_params"].astype(np.float64)
    offsets = arrays["gt_offsets"]
    sample_meta = meta["samples"]
    if offsets.shape[0] != len(sample_meta) + 1:
        raise MalformedRecord("gt_offsets length disagrees with the sample list")
    inline_emb = arrays.get("embeddings")

    samples = []
    errors = []
    for i, rec in enumerate(sample_meta):
        try:
            lo, hi = int(offsets[i]), int(offsets[i + 1])
            if hi <= lo:
                raise MalformedRecord("ground-truth set is empty (k = 0)")
            gt = canonical_order(ShapeSet.from_array(params[lo:hi]))
            tokens = tuple(rec["tokens"])
            if inline:
                if inline_emb is None:
                    raise MalformedRecord("manifest declares inline embeddings but has none")
                emb = WordEmbeddings(matrix=inline_emb[i].astype(np.float64),
                                     word_count=int(rec["word_count"]), tokens=tokens)
            else:
                emb = encode_caption(tokens, embedder)
            sample = Sample(caption_id=rec["caption_id"], tokens=tokens, embeddings=emb,
                            gt=gt, split=rec["split"], image_id=rec.get("image_id"))
            sample.validate(meta["k_max"])
            samples.append(sample)
        except MalformedRecord as exc:
            errors.append(f"record {i} ({rec.get('caption_id', '?')}): {exc}")
    if errors:
        raise MalformedRecord("; ".join(errors))

    return DatasetManifest(k_max=int(meta["k_max"]), embedder_spec=embedder_spec,
                           samples=samples, extra=meta.get("extra", {}),
                           version=int(meta.get("manifest_version", 1)))
