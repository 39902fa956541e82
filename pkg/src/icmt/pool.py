"""Object pool and background ingestion from COCO-style segmentation annotations.

Segmentation masks are consumed, not predicted: any upstream tool (ground
truth, an instance-segmentation model) that can emit COCO JSON feeds the
same :class:`AnnotationRecord` shape.
"""
from __future__ import annotations

import json
import logging
import math
import os
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np
from PIL import Image

from .exceptions import (EmptyBackgrounds, EmptyPool, InputError, MaskEmpty, MissingImage,
                         ParseError)
from .geometry import BackgroundImage, BackgroundObject, ObjectClass, ObjectInstance, Rect
from .masks import mask_extent, segmentation_to_mask

logger = logging.getLogger(__name__)

PathLike = Union[str, os.PathLike]


@dataclass(frozen=True)
class InstanceAnnotation:
    annotation_id: int
    object_class: ObjectClass
    segmentation: Union[list, dict]
    bbox: tuple[float, float, float, float]
    area: float


@dataclass(frozen=True)
class AnnotationRecord:
    image_id: str
    image_path: str
    width: int
    height: int
    instances: tuple[InstanceAnnotation, ...]


@dataclass(frozen=True)
class PoolEntry:
    id: str
    class_name: str
    path: str
    area: int
    source_image: str
    bbox: tuple[int, int, int, int]
    super_category: Optional[str] = None


@dataclass
class PoolManifest:
    root: str
    entries: list[PoolEntry] = field(default_factory=list)

    @property
    def class_index(self) -> dict[str, list[str]]:
        index: dict[str, list[str]] = defaultdict(list)
        for e in self.entries:
            index[e.class_name].append(e.id)
        return dict(sorted(index.items()))

    def __len__(self):
        return len(self.entries)

    def get(self, entry_id: str) -> PoolEntry:
        for e in self.entries:
            if e.id == entry_id:
                return e
        raise KeyError(entry_id)

    def to_dict(self) -> dict:
        return {
            "entries": [
                {"id": e.id, "class": e.class_name, "path": e.path, "area": e.area,
                 "source_image": e.source_image, "bbox": list(e.bbox),
                 "super_category": e.super_category}
                for e in self.entries
            ],
            "class_index": self.class_index,
        }


def _single_word(name: str) -> bool:
    return bool(name) and not any(ch.isspace() for ch in name.strip())


def ingest_annotations(annotation_file: PathLike, image_dir: PathLike,
                       class_filter: Optional[Iterable] = None) -> list[AnnotationRecord]:
    """Read a COCO instances file into per-image records.

    Only single-word class names are kept (multi-word ones cannot be matched
    to a single caption token); ``class_filter`` narrows further. Images with
    no retained instance are skipped.
    """
    try:
        with open(annotation_file, encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError as exc:
        raise InputError(f"annotation file not found: {annotation_file}") from exc
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ParseError(f"{annotation_file}: {exc}") from exc
    if not isinstance(data, dict):
        raise ParseError(f"{annotation_file}: top level must be an object")

    wanted = None
    if class_filter is not None:
        wanted = {c.name if isinstance(c, ObjectClass) else str(c).lower() for c in class_filter}

    try:
        categories = {}
        dropped_multiword = set()
        for cat in data.get("categories", []):
            name = str(cat["name"]).strip().lower()
            if not _single_word(name):
                dropped_multiword.add(cat["id"])
                continue
            categories[cat["id"]] = ObjectClass(name, cat.get("supercategory"))
        images = {img["id"]: img for img in data.get("images", [])}

        per_image: dict = defaultdict(list)
        n_multiword = 0
        for ann in data.get("annotations", []):
            cat_id = ann["category_id"]
            if cat_id in dropped_multiword:
                n_multiword += 1
                continue
            cls = categories.get(cat_id)
            if cls is None:
                raise ParseError(f"annotation {ann.get('id')} references unknown category {cat_id}")
            if wanted is not None and cls.name not in wanted:
                continue
            if ann["image_id"] not in images:
                raise ParseError(f"annotation {ann.get('id')} references unknown image {ann['image_id']}")
            per_image[ann["image_id"]].append(InstanceAnnotation(
                annotation_id=int(ann.get("id", len(per_image[ann["image_id"]]))),
                object_class=cls,
                segmentation=ann.get("segmentation", []),
                bbox=tuple(float(v) for v in ann["bbox"]),
                area=float(ann.get("area", ann["bbox"][2] * ann["bbox"][3])),
            ))
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{annotation_file}: malformed COCO structure ({exc!r})") from exc

    if n_multiword:
        logger.warning("dropped %d annotation(s) with multi-word class names", n_multiword)

    records = []
    for image_id in sorted(per_image, key=lambda k: str(k)):
        img = images[image_id]
        path = Path(image_dir) / img["file_name"]
        if not path.is_file():
            raise MissingImage(str(path))
        records.append(AnnotationRecord(
            image_id=str(image_id), image_path=str(path),
            width=int(img["width"]), height=int(img["height"]),
            instances=tuple(sorted(per_image[image_id], key=lambda a: a.annotation_id)),
        ))
    return records


def load_rgb(path: PathLike) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def extract_object(record: AnnotationRecord, instance_index: int,
                   image: Optional[np.ndarray] = None) -> ObjectInstance:
    """Cut one instance out of its source image as an RGBA crop.

    The crop is the tight box around the mask cells; pixels outside the mask
    get alpha 0 and zeroed colour so the crop is byte-stable.
    """
    inst = record.instances[instance_index]
    if image is None:
        image = load_rgb(record.image_path)
    if image.shape[:2] != (record.height, record.width):
        raise InputError(
            f"image {record.image_path} is {image.shape[1]}x{image.shape[0]}, "
            f"annotations say {record.width}x{record.height}")
    mask = segmentation_to_mask(inst.segmentation, record.height, record.width)
    extent = mask_extent(mask)
    if extent is None:
        raise MaskEmpty(f"instance {inst.annotation_id} of image {record.image_id} has an empty mask")
    x, y, w, h = extent
    crop_mask = mask[y:y + h, x:x + w]
    rgba = np.zeros((h, w, 4), dtype=np.uint8)
    rgba[..., :3] = image[y:y + h, x:x + w]
    rgba[~crop_mask, :3] = 0
    rgba[..., 3] = np.where(crop_mask, 255, 0)
    return ObjectInstance(
        id=f"{record.image_id}-{inst.annotation_id}",
        object_class=inst.object_class,
        pixels=rgba,
        mask=crop_mask,
        bbox_in_source=Rect(x, y, w, h),
    )


def _write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def build_pool(records: Sequence[AnnotationRecord], out_dir: PathLike) -> PoolManifest:
    """Write every instance as ``<class>/<id>.png`` plus a JSON sidecar and a manifest.

    Empty masks are skipped with a warning. Re-running on the same input
    rewrites byte-identical files.
    """
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    skipped = 0
    for record in records:
        image = load_rgb(record.image_path)
        for idx in range(len(record.instances)):
            try:
                obj = extract_object(record, idx, image=image)
            except MaskEmpty as exc:
                logger.warning("%s", exc)
                skipped += 1
                continue
            cls = obj.object_class.name
            rel = f"{cls}/{obj.id}.png"
            (root / cls).mkdir(exist_ok=True)
            Image.fromarray(obj.pixels, mode="RGBA").save(root / rel, format="PNG")
            entry = PoolEntry(id=obj.id, class_name=cls, path=rel, area=obj.area,
                              source_image=record.image_id,
                              bbox=tuple(obj.bbox_in_source.to_list()),
                              super_category=obj.object_class.super_category)
            _write_json(root / cls / f"{obj.id}.json", {
                "id": entry.id, "class": cls, "area": entry.area,
                "source_image": entry.source_image, "bbox": list(entry.bbox),
            })
            entries.append(entry)
    entries.sort(key=lambda e: (e.class_name, e.id))
    manifest = PoolManifest(root=str(root), entries=entries)
    _write_json(root / "manifest.json", manifest.to_dict())
    if skipped:
        logger.warning("skipped %d empty instance mask(s)", skipped)
    return manifest


def load_manifest(path: PathLike) -> PoolManifest:
    """Load ``manifest.json`` (or the pool directory holding it)."""
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
        entries = [PoolEntry(id=e["id"], class_name=e["class"], path=e["path"], area=int(e["area"]),
                             source_image=str(e["source_image"]), bbox=tuple(e["bbox"]),
                             super_category=e.get("super_category"))
                   for e in data["entries"]]
    except FileNotFoundError as exc:
        raise InputError(f"pool manifest not found: {path}") from exc
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ParseError(f"{path}: {exc!r}") from exc
    manifest = PoolManifest(root=str(path.parent), entries=entries)
    ids = [e.id for e in entries]
    if len(set(ids)) != len(ids):
        raise ParseError(f"{path}: duplicate entry ids")
    for e in entries:
        if not (path.parent / e.path).is_file():
            raise MissingImage(str(path.parent / e.path))
    return manifest


def load_object(manifest: PoolManifest, entry: Union[PoolEntry, str]) -> ObjectInstance:
    if isinstance(entry, str):
        entry = manifest.get(entry)
    with Image.open(Path(manifest.root) / entry.path) as im:
        rgba = np.asarray(im.convert("RGBA"), dtype=np.uint8).copy()
    mask = rgba[..., 3] > 0
    return ObjectInstance(id=entry.id, object_class=ObjectClass(entry.class_name, entry.super_category),
                          pixels=rgba, mask=mask, bbox_in_source=Rect.from_list(entry.bbox))


def _bbox_rect(bbox, width: int, height: int) -> Optional[Rect]:
    """Snap a float COCO bbox outward to whole pixels, clipped to the image."""
    x, y, w, h = bbox
    x0 = max(0, int(math.floor(x)))
    y0 = max(0, int(math.floor(y)))
    x1 = min(width, int(math.ceil(x + w)))
    y1 = min(height, int(math.ceil(y + h)))
    if x1 <= x0 or y1 <= y0:
        return None
    return Rect(x0, y0, x1 - x0, y1 - y0)


def background_from_record(record: AnnotationRecord, load_pixels: bool = True,
                           provenance: str = "ground_truth") -> BackgroundImage:
    objects = []
    for inst in record.instances:
        rect = _bbox_rect(inst.bbox, record.width, record.height)
        if rect is None:
            continue
        area = int(round(inst.area)) or rect.area()
        objects.append(BackgroundObject(inst.object_class, rect, area))
    pixels = load_rgb(record.image_path) if load_pixels else None
    return BackgroundImage(id=record.image_id, width=record.width, height=record.height,
                           objects=tuple(objects), pixels=pixels, path=record.image_path,
                           provenance=provenance)


def write_backgrounds(backgrounds: Sequence[BackgroundImage], path: PathLike) -> None:
    """Write the background index; image paths are stored relative to ``path``'s directory."""
    base = Path(path).resolve().parent
    payload = {"backgrounds": [
        {"id": b.id, "path": os.path.relpath(Path(b.path).resolve(), base) if b.path else None,
         "width": b.width, "height": b.height,
         "provenance": b.provenance,
         "objects": [{"class": o.object_class.name, "super_category": o.object_class.super_category,
                      "bbox": o.bbox.to_list(), "area": o.area} for o in b.objects]}
        for b in backgrounds
    ]}
    _write_json(Path(path), payload)


def load_backgrounds(path: PathLike, load_pixels: bool = True) -> list[BackgroundImage]:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
        out = []
        for b in data["backgrounds"]:
            img_path = Path(b["path"])
            if not img_path.is_absolute():
                img_path = path.parent / img_path
            if not img_path.is_file():
                raise MissingImage(str(img_path))
            objects = tuple(BackgroundObject(ObjectClass(o["class"], o.get("super_category")),
                                             Rect.from_list(o["bbox"]), int(o["area"]))
                            for o in b["objects"])
            out.append(BackgroundImage(
                id=str(b["id"]), width=int(b["width"]), height=int(b["height"]), objects=objects,
                pixels=load_rgb(img_path) if load_pixels else None, path=str(img_path),
                provenance=b.get("provenance", "ground_truth")))
    except FileNotFoundError as exc:
        raise InputError(f"backgrounds file not found: {path}") from exc
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ParseError(f"{path}: {exc!r}") from exc
    return out


def sample_pair(pool: PoolManifest, backgrounds: Sequence[BackgroundImage], rng_seed: int):
    """Uniformly draw one background and one pool object, driven only by ``rng_seed``."""
    if not len(pool):
        raise EmptyPool("object pool is empty")
    usable = [b for b in backgrounds if b.objects]
    if not usable:
        raise EmptyBackgrounds("no background image with annotated objects")
    rng = np.random.default_rng(rng_seed)
    bg = usable[int(rng.integers(len(usable)))]
    entry = pool.entries[int(rng.integers(len(pool.entries)))]
    return bg, load_object(pool, entry)
