# Ingest CGL/PKU-style poster annotations into the JSONL interchange format

import csv
from dataclasses import dataclass, field
import hashlib
import json
import os
import sys
from typing import Optional

import cv2
import numpy as np

from layout_core import Canvas, Category, Element, Layout, profile_categories, round_half_up
from utils import metadata_path, write_metadata

SCHEMA_VERSION = 1
SPLITS = ("train", "val", "test")
PROVENANCES = ("original", "augmented")

# 64-bit BLAKE2b split hash, fixed personalization
SPLIT_HASH_PERSON = b"layoutsplit.v1"
TRAIN_CUTOFF = (8 << 64) // 10
VAL_CUTOFF = (9 << 64) // 10

CATEGORY_NAMES = {
    "logo": Category.LOGO,
    "text": Category.TEXT,
    "underlay": Category.UNDERLAY,
    "embellishment": Category.EMBELLISHMENT,
}
PKU_CLASS_IDS = {1: Category.TEXT, 2: Category.LOGO, 3: Category.UNDERLAY}


class AdapterError(ValueError):
    """Raised when a raw annotation file cannot be read by the selected adapter."""


@dataclass(frozen=True)
class SampleRecord:
    id: str
    dataset: str
    canvas: Canvas
    elements: tuple
    texts: Optional[tuple] = None
    split: str = "train"
    provenance: str = "original"
    parent_id: Optional[str] = None

    def __post_init__(self):
        profile_categories(self.dataset)
        object.__setattr__(self, "elements", tuple(self.elements))
        if self.texts is not None:
            object.__setattr__(self, "texts", tuple(self.texts))
        if self.split not in SPLITS:
            raise ValueError(f"Unknown split: {self.split!r}")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"Unknown provenance: {self.provenance!r}")
        if self.provenance == "augmented" and not self.parent_id:
            raise ValueError(f"Augmented record {self.id} has no parent_id")

    def layout(self):
        return Layout(self.canvas, self.elements, self.texts)

    def to_dict(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "id": self.id,
            "dataset": self.dataset,
            "canvas": self.canvas.to_dict(),
            "elements": [e.to_dict() for e in self.elements],
            "texts": list(self.texts) if self.texts is not None else None,
            "split": self.split,
            "provenance": self.provenance,
            "parent_id": self.parent_id,
        }

    @classmethod
    def from_dict(cls, data):
        version = data.get("schema_version")
        if version != SCHEMA_VERSION:
            raise AdapterError(f"Unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")
        texts = data.get("texts")
        return cls(id=data["id"], dataset=data["dataset"], canvas=Canvas.from_dict(data["canvas"]),
                   elements=tuple(Element.from_dict(e) for e in data["elements"]),
                   texts=tuple(texts) if texts is not None else None,
                   split=data["split"], provenance=data.get("provenance", "original"),
                   parent_id=data.get("parent_id"))


@dataclass
class IngestStats:
    n_read: int = 0
    n_written: int = 0
    n_dropped_category: int = 0
    n_missing_image: int = 0
    n_clipped_boxes: int = 0
    dropped_categories: dict = field(default_factory=dict)

    def as_fields(self):
        return {
            "Posters read": self.n_read,
            "Records written": self.n_written,
            "Dropped (category outside profile)": self.n_dropped_category,
            "Skipped (missing image)": self.n_missing_image,
            "Boxes clipped to image": self.n_clipped_boxes,
            "Dropped categories": self.dropped_categories or "none",
        }


@dataclass
class RawPoster:
    id: str
    image_file: str
    width: Optional[int]
    height: Optional[int]
    boxes: list  # (category name or id, x, y, w, h) in raw pixels
    texts: Optional[list] = None


def assign_split(record_id):
    """Map an id to train/val/test with probabilities 0.8/0.1/0.1, stable across runs."""
    digest = hashlib.blake2b(record_id.encode("utf-8"), digest_size=8, person=SPLIT_HASH_PERSON).digest()
    value = int.from_bytes(digest, "big")
    if value < TRAIN_CUTOFF:
        return "train"
    if value < VAL_CUTOFF:
        return "val"
    return "test"


def _stem(path):
    return os.path.splitext(os.path.basename(path))[0]


def read_cgl_coco_v1(annotation_file):
    """COCO-style JSON: images, annotations (bbox = x, y, w, h), categories, optional texts by image id."""
    try:
        with open(annotation_file, 'r', encoding='utf-8') as f:
            data = json.load(f)
        categories = {c["id"]: c["name"] for c in data["categories"]}
        texts = {str(k): v for k, v in data.get("texts", {}).items()}
        boxes = {}
        for ann in data["annotations"]:
            x, y, w, h = ann["bbox"]
            boxes.setdefault(ann["image_id"], []).append((categories.get(ann["category_id"], ann["category_id"]),
                                                          x, y, w, h))
        for image in data["images"]:
            yield RawPoster(id=_stem(image["file_name"]), image_file=image["file_name"],
                            width=image.get("width"), height=image.get("height"),
                            boxes=boxes.get(image["id"], []), texts=texts.get(str(image["id"])))
    except (KeyError, TypeError, ValueError) as e:
        raise AdapterError(f"Malformed CGL annotation file {annotation_file}: {e}") from e


def read_pku_csv_v1(annotation_file):
    """CSV with one row per element: poster_path, cls_elem, box_elem = [x1, y1, x2, y2]."""
    posters = {}
    try:
        with open(annotation_file, 'r', encoding='utf-8', newline='') as f:
            for row in csv.DictReader(f):
                path = row["poster_path"]
                cls = row["cls_elem"].strip()
                category = int(cls) if cls.lstrip("-").isdigit() else cls
                x1, y1, x2, y2 = json.loads(row["box_elem"])
                if path not in posters:
                    posters[path] = []
                if cls == "0":
                    continue  # posters without elements carry a single class-0 row
                posters[path].append((category, x1, y1, x2 - x1, y2 - y1))
    except (KeyError, TypeError, ValueError) as e:
        raise AdapterError(f"Malformed PKU annotation file {annotation_file}: {e}") from e
    for path, boxes in posters.items():
        yield RawPoster(id=_stem(path), image_file=path, width=None, height=None, boxes=boxes)


ADAPTERS = {
    "cgl_coco_v1": read_cgl_coco_v1,
    "pku_csv_v1": read_pku_csv_v1,
}
DEFAULT_ADAPTERS = {"cgl": "cgl_coco_v1", "pku": "pku_csv_v1"}


def map_category(raw):
    if isinstance(raw, (int, np.integer)):
        return PKU_CLASS_IDS.get(int(raw))
    return CATEGORY_NAMES.get(str(raw).strip().lower())


def _scale_box(box, src_w, src_h, canvas):
    """Clip a raw box to the source image, then scale it onto the canvas grid."""
    x, y, w, h = box
    x1, y1 = max(0.0, float(x)), max(0.0, float(y))
    x2, y2 = min(float(src_w), float(x) + float(w)), min(float(src_h), float(y) + float(h))
    clipped = (x1, y1, x2, y2) != (float(x), float(y), float(x) + float(w), float(y) + float(h))
    sx, sy = canvas.width / src_w, canvas.height / src_h
    px1 = min(round_half_up(x1 * sx), canvas.width)
    py1 = min(round_half_up(y1 * sy), canvas.height)
    px2 = min(max(round_half_up(x2 * sx), px1), canvas.width)
    py2 = min(max(round_half_up(y2 * sy), py1), canvas.height)
    return (px1, py1, px2 - px1, py2 - py1), clipped


def _find_saliency(saliency_dir, image_file):
    for name in (os.path.basename(image_file), _stem(image_file) + ".png", _stem(image_file) + ".jpg"):
        candidate = os.path.join(saliency_dir, name)
        if os.path.isfile(candidate):
            return candidate
    return None


def _relative(path, root):
    return os.path.relpath(path, root).replace(os.sep, "/")


def ingest(annotation_file, images_dir, profile, stats=None, assets_root=None, saliency_dir=None,
           resize=None, adapter=None):
    """
    Stream SampleRecords from a raw annotation file.

    Args:
        annotation_file (str): Raw annotation file
        images_dir (str): Directory holding the poster (canvas) images
        profile (str): Dataset profile, "cgl" or "pku"
        stats (IngestStats): Counters updated in place
        assets_root (str): Root that stored image paths are relative to (default: images_dir)
        saliency_dir (str): Optional directory of saliency maps named like the images
        resize (tuple): Optional (width, height) canvas to scale annotations onto
        adapter (str): Adapter name (default depends on profile)

    Yields:
        SampleRecord
    """
    profile = profile.lower()
    allowed = profile_categories(profile)
    stats = stats if stats is not None else IngestStats()
    assets_root = assets_root or images_dir
    adapter_name = adapter or DEFAULT_ADAPTERS[profile]
    if adapter_name not in ADAPTERS:
        raise AdapterError(f"Unknown adapter {adapter_name!r}; available: {sorted(ADAPTERS)}")

    for raw in ADAPTERS[adapter_name](annotation_file):
        stats.n_read += 1
        image_path = os.path.join(images_dir, raw.image_file)
        if not os.path.isfile(image_path):
            print(f"⚠️  Skipping {raw.id}: image not found ({image_path})")
            stats.n_missing_image += 1
            continue

        categories = [map_category(box[0]) for box in raw.boxes]
        rejected = [str(box[0]) for box, c in zip(raw.boxes, categories) if c is None or c not in allowed]
        if rejected:
            stats.n_dropped_category += 1
            for name in rejected:
                stats.dropped_categories[name] = stats.dropped_categories.get(name, 0) + 1
            continue

        src_w, src_h = raw.width, raw.height
        if not src_w or not src_h:
            image = cv2.imread(image_path, cv2.IMREAD_UNCHANGED)
            if image is None:
                print(f"⚠️  Skipping {raw.id}: image unreadable ({image_path})")
                stats.n_missing_image += 1
                continue
            src_h, src_w = image.shape[:2]

        saliency_ref = None
        if saliency_dir:
            saliency_path = _find_saliency(saliency_dir, raw.image_file)
            if saliency_path:
                saliency_ref = _relative(saliency_path, assets_root)

        width, height = resize if resize else (int(src_w), int(src_h))
        canvas = Canvas(int(width), int(height), _relative(image_path, assets_root), saliency_ref)
        elements = []
        for category, box in zip(categories, raw.boxes):
            (x, y, w, h), clipped = _scale_box(box[1:], src_w, src_h, canvas)
            stats.n_clipped_boxes += int(clipped)
            elements.append(Element(category, x, y, w, h))

        texts = None
        n_text = sum(1 for e in elements if e.category == Category.TEXT)
        if raw.texts is not None and len(raw.texts) == n_text:
            texts = tuple(raw.texts)

        stats.n_written += 1
        yield SampleRecord(id=raw.id, dataset=profile, canvas=canvas, elements=tuple(elements),
                           texts=texts, split=assign_split(raw.id))


def record_to_line(record):
    return json.dumps(record.to_dict(), ensure_ascii=False)


def write_records(records, path):
    """Write records to JSONL; returns the number written."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    count = 0
    with open(path, 'w', encoding='utf-8') as f:
        for record in records:
            f.write(record_to_line(record) + "\n")
            count += 1
    return count


def iter_records(path):
    with open(path, 'r', encoding='utf-8') as f:
        for line_no, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                yield SampleRecord.from_dict(json.loads(line))
            except (KeyError, json.JSONDecodeError) as e:
                raise AdapterError(f"{path}:{line_no}: invalid record: {e}") from e


def read_records(path):
    return list(iter_records(path))


def partition_by_split(records):
    parts = {split: [] for split in SPLITS}
    for record in records:
        parts[record.split].append(record)
    return parts


def resolve_asset(assets_root, ref):
    if not ref:
        return None
    path = ref if os.path.isabs(ref) else os.path.join(assets_root, ref)
    return path if os.path.isfile(path) else None


def load_grayscale(path, size=None):
    """
    Load an image as grayscale float64 in [0, 1].

    Args:
        path (str): Image file (PNG/JPEG; color is converted)
        size (tuple): Optional (width, height) to resize to

    Returns:
        np.ndarray: (height, width) array
    """
    image = cv2.imread(path, cv2.IMREAD_GRAYSCALE)
    if image is None:
        raise FileNotFoundError(f"Could not read image: {path}")
    if size is not None and (image.shape[1], image.shape[0]) != tuple(size):
        image = cv2.resize(image, tuple(int(s) for s in size), interpolation=cv2.INTER_AREA)
    return image.astype(np.float64) / 255.0


def main():
    import argparse

    parser = argparse.ArgumentParser(description='Ingest CGL/PKU poster annotations into SampleRecord JSONL')
    parser.add_argument('--profile', required=True, choices=['cgl', 'pku'], help='Dataset profile')
    parser.add_argument('--annotations', required=True, help='Raw annotation file')
    parser.add_argument('--images', required=True, help='Directory of canvas images')
    parser.add_argument('--out', required=True, help='Output JSONL file')
    parser.add_argument('--assets-root', default=None, help='Root for stored image paths (default: --images)')
    parser.add_argument('--saliency', default=None, help='Directory of saliency maps')
    parser.add_argument('--resize', nargs=2, type=int, metavar=('W', 'H'), default=None,
                        help='Scale annotations onto a fixed canvas size')
    parser.add_argument('--adapter', default=None, choices=sorted(ADAPTERS), help='Annotation adapter')
    parser.add_argument('--split-dir', default=None, help='Also write train/val/test JSONL files here')
    args = parser.parse_args()

    if not os.path.isfile(args.annotations):
        print(f"ERROR: Annotation file {args.annotations} does not exist.")
        return 1
    if not os.path.isdir(args.images):
        print(f"ERROR: Image directory {args.images} does not exist.")
        return 1

    print(f"🚀 Ingesting {args.profile.upper()} annotations from {args.annotations}")
    stats = IngestStats()
    try:
        records = list(ingest(args.annotations, args.images, args.profile, stats,
                              assets_root=args.assets_root, saliency_dir=args.saliency,
                              resize=tuple(args.resize) if args.resize else None, adapter=args.adapter))
        write_records(records, args.out)
        if args.split_dir:
            for split, part in partition_by_split(records).items():
                write_records(part, os.path.join(args.split_dir, f"{split}.jsonl"))
    except AdapterError as e:
        print(f"❌ Ingestion failed: {e}")
        return 1

    fields = {"Profile": args.profile, "Annotations": args.annotations, "Images": args.images,
              **stats.as_fields()}
    write_metadata(metadata_path(args.out), "Ingestion Metadata", fields)
    for key, value in stats.as_fields().items():
        print(f"  {key}: {value}")
    print(f"✅ Wrote {stats.n_written} records to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
