import pytest
import numpy as np
import tempfile
import shutil
import hashlib
import json
import csv
import os
import sys
import cv2

# Add src directory to path for imports
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from layout_core import Canvas, Category, Element
from dataset_io import (
    AdapterError, IngestStats, SampleRecord, assign_split, ingest, iter_records, load_grayscale,
    partition_by_split, read_records, resolve_asset, write_records,
)

GOLDEN_BOXES = [
    ("text", 172, 80, 179, 29),
    ("text", 75, 199, 197, 41),
    ("text", 282, 201, 162, 39),
    ("text", 40, 119, 45, 58),
    ("underlay", 190, 16, 149, 61),
    ("logo", 55, 189, 408, 64),
]
GOLDEN_ELEMENTS = tuple(Element(Category.from_name(c.capitalize()), x, y, w, h) for c, x, y, w, h in GOLDEN_BOXES)


def write_image(path, width=513, height=750, value=0):
    os.makedirs(os.path.dirname(path), exist_ok=True)
    assert cv2.imwrite(path, np.full((height, width, 3), value, dtype=np.uint8))


def write_coco(path, posters):
    """posters: list of (file_name, width, height, boxes, texts)."""
    names = ["logo", "text", "underlay", "embellishment"]
    data = {"images": [], "annotations": [], "categories": [{"id": i + 1, "name": n} for i, n in enumerate(names)],
            "texts": {}}
    for image_id, (file_name, width, height, boxes, texts) in enumerate(posters, 1):
        data["images"].append({"id": image_id, "file_name": file_name, "width": width, "height": height})
        for category, x, y, w, h in boxes:
            data["annotations"].append({"image_id": image_id, "category_id": names.index(category) + 1,
                                        "bbox": [x, y, w, h]})
        if texts is not None:
            data["texts"][str(image_id)] = texts
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(data, f)


class TestCglIngest:
    """Test ingestion of CGL-style COCO annotations."""

    @pytest.fixture
    def temp_dir(self):
        """Create a temporary directory for test files."""
        temp_dir = tempfile.mkdtemp()
        yield temp_dir
        shutil.rmtree(temp_dir)

    @pytest.fixture
    def images_dir(self, temp_dir):
        images = os.path.join(temp_dir, 'images')
        write_image(os.path.join(images, 'poster_001.png'))
        write_image(os.path.join(images, 'poster_002.png'))
        return images

    @pytest.fixture
    def annotation_file(self, temp_dir, images_dir):
        path = os.path.join(temp_dir, 'annotations.json')
        write_coco(path, [
            ('poster_001.png', 513, 750, GOLDEN_BOXES, ["A", "B", "C", "D"]),
            ('poster_002.png', 513, 750, [("embellishment", 10, 10, 50, 50), ("logo", 500, 700, 40, 80)], None),
            ('poster_003.png', 513, 750, [("logo", 0, 0, 10, 10)], None),
        ])
        return path

    def test_golden_record(self, annotation_file, images_dir):
        """Test one annotated poster becomes the expected SampleRecord."""
        stats = IngestStats()
        records = list(ingest(annotation_file, images_dir, 'cgl', stats))
        assert [r.id for r in records] == ['poster_001', 'poster_002']
        record = records[0]
        assert record.elements == GOLDEN_ELEMENTS
        assert record.canvas == Canvas(513, 750, 'poster_001.png')
        assert record.texts == ("A", "B", "C", "D")
        assert record.split == assign_split('poster_001')
        assert stats.n_read == 3
        assert stats.n_missing_image == 1

    def test_raw_boxes_are_clipped(self, annotation_file, images_dir):
        """Test boxes crossing the canvas edge are clipped and counted."""
        stats = IngestStats()
        record = list(ingest(annotation_file, images_dir, 'cgl', stats))[1]
        assert record.elements[1] == Element(Category.LOGO, 500, 700, 13, 50)
        assert stats.n_clipped_boxes == 1

    def test_pku_profile_drops_embellishment_posters(self, annotation_file, images_dir):
        """Test the PKU profile skips posters with embellishments."""
        stats = IngestStats()
        records = list(ingest(annotation_file, images_dir, 'pku', stats, adapter='cgl_coco_v1'))
        assert [r.id for r in records] == ['poster_001']
        assert stats.n_dropped_category == 1
        assert stats.dropped_categories == {"embellishment": 1}
        assert records[0].dataset == 'pku'

    def test_resize_scales_boxes(self, annotation_file, images_dir):
        """Test --resize scales boxes to the target canvas."""
        record = list(ingest(annotation_file, images_dir, 'cgl', resize=(1026, 1500)))[0]
        assert record.canvas.shape == (1500, 1026)
        assert record.elements[0] == Element(Category.TEXT, 344, 160, 358, 58)

    def test_assets_root_and_saliency(self, temp_dir, annotation_file, images_dir):
        """Test image and saliency paths are stored relative to the assets root."""
        saliency_dir = os.path.join(temp_dir, 'saliency')
        write_image(os.path.join(saliency_dir, 'poster_001.png'))
        record = list(ingest(annotation_file, images_dir, 'cgl', assets_root=temp_dir,
                             saliency_dir=saliency_dir))[0]
        assert record.canvas.image_ref == 'images/poster_001.png'
        assert record.canvas.saliency_ref == 'saliency/poster_001.png'
        assert resolve_asset(temp_dir, record.canvas.image_ref) == os.path.join(temp_dir, 'images/poster_001.png')
        assert resolve_asset(temp_dir, record.canvas.saliency_ref) is not None

    def test_ingest_is_deterministic(self, annotation_file, images_dir):
        """Test two ingests of the same input produce identical records."""
        first = list(ingest(annotation_file, images_dir, 'cgl'))
        second = list(ingest(annotation_file, images_dir, 'cgl'))
        assert first == second

    def test_malformed_annotation_file(self, temp_dir, images_dir):
        """Test a malformed annotation file raises a domain error."""
        path = os.path.join(temp_dir, 'broken.json')
        with open(path, 'w', encoding='utf-8') as f:
            json.dump({"images": []}, f)
        with pytest.raises(AdapterError):
            list(ingest(path, images_dir, 'cgl'))

    def test_unknown_adapter(self, annotation_file, images_dir):
        """Test an unknown adapter name is rejected."""
        with pytest.raises(AdapterError):
            list(ingest(annotation_file, images_dir, 'cgl', adapter='rico_v1'))


class TestPkuIngest:
    """Test ingestion of PKU-style CSV annotations."""

    @pytest.fixture
    def temp_dir(self):
        """Create a temporary directory for test files."""
        temp_dir = tempfile.mkdtemp()
        yield temp_dir
        shutil.rmtree(temp_dir)

    def test_csv_rows_group_by_poster(self, temp_dir):
        """Test CSV rows are grouped into one record per poster."""
        images = os.path.join(temp_dir, 'inpainted')
        write_image(os.path.join(images, 'train/101.png'), width=200, height=300)
        write_image(os.path.join(images, 'train/102.png'), width=200, height=300)
        path = os.path.join(temp_dir, 'train_csv_9973.csv')
        with open(path, 'w', encoding='utf-8', newline='') as f:
            writer = csv.writer(f)
            writer.writerow(['poster_path', 'total_elem', 'cls_elem', 'box_elem'])
            writer.writerow(['train/101.png', 3, 1, '[10, 20, 110, 60]'])
            writer.writerow(['train/101.png', 3, 2, '[0, 0, 50, 50]'])
            writer.writerow(['train/101.png', 3, 3, '[5, 15, 120, 70]'])
            writer.writerow(['train/102.png', 0, 0, '[0, 0, 0, 0]'])
        records = list(ingest(path, images, 'pku'))
        assert [r.id for r in records] == ['101', '102']
        assert records[0].canvas.shape == (300, 200)
        assert records[0].elements == (Element(Category.TEXT, 10, 20, 100, 40), Element(Category.LOGO, 0, 0, 50, 50),
                                       Element(Category.UNDERLAY, 5, 15, 115, 55))
        assert records[1].elements == ()


class TestSplits:
    """Test deterministic train/val/test assignment."""

    def test_fractions(self):
        """Test split sizes approach 8:1:1 over many ids."""
        counts = {"train": 0, "val": 0, "test": 0}
        for i in range(100000):
            counts[assign_split(f"poster_{i}")] += 1
        assert abs(counts["train"] / 100000 - 0.8) < 0.005
        assert abs(counts["val"] / 100000 - 0.1) < 0.005
        assert abs(counts["test"] / 100000 - 0.1) < 0.005

    def test_matches_hash_definition(self):
        """Test assignment follows the BLAKE2b bucket of the id."""
        for record_id in ["a", "poster_7", "训练-1"]:
            digest = hashlib.blake2b(record_id.encode("utf-8"), digest_size=8, person=b"layoutsplit.v1").digest()
            fraction = int.from_bytes(digest, "big") / 2 ** 64
            expected = "train" if fraction < 0.8 else ("val" if fraction < 0.9 else "test")
            assert assign_split(record_id) == expected


class TestRecords:
    """Test SampleRecord JSONL interchange."""

    @pytest.fixture
    def temp_dir(self):
        """Create a temporary directory for test files."""
        temp_dir = tempfile.mkdtemp()
        yield temp_dir
        shutil.rmtree(temp_dir)

    @pytest.fixture
    def records(self):
        canvas = Canvas(513, 750, 'images/p1.png', 'saliency/p1.png')
        return [
            SampleRecord('p1', 'cgl', canvas, GOLDEN_ELEMENTS, ("a", "b", "c", "d"), split='train'),
            SampleRecord('p1-aug03', 'cgl', Canvas(513, 750, 'aug/p1/3.png'), GOLDEN_ELEMENTS, split='train',
                         provenance='augmented', parent_id='p1'),
            SampleRecord('p2', 'pku', Canvas(100, 100), (), split='test'),
        ]

    def test_jsonl_round_trip(self, records, temp_dir):
        """Test records survive a write and read unchanged."""
        path = os.path.join(temp_dir, 'records.jsonl')
        assert write_records(records, path) == 3
        assert read_records(path) == records
        with open(path, 'r', encoding='utf-8') as f:
            first = json.loads(f.readline())
        assert first["schema_version"] == 1
        assert first["elements"][0] == {"category": "Text", "x": 172, "y": 80, "w": 179, "h": 29}

    def test_unknown_schema_version(self, records, temp_dir):
        """Test a newer schema version is refused."""
        path = os.path.join(temp_dir, 'records.jsonl')
        data = records[0].to_dict()
        data["schema_version"] = 2
        with open(path, 'w', encoding='utf-8') as f:
            f.write(json.dumps(data) + "\n")
        with pytest.raises(AdapterError):
            list(iter_records(path))

    def test_augmented_record_needs_parent(self):
        """Test augmented records must name their parent."""
        with pytest.raises(ValueError):
            SampleRecord('x-aug01', 'cgl', Canvas(10, 10), (), provenance='augmented')

    def test_partition(self, records):
        """Test records are grouped by split."""
        parts = partition_by_split(records)
        assert [r.id for r in parts['train']] == ['p1', 'p1-aug03']
        assert parts['val'] == []

    def test_layout_view(self, records):
        """Test a record exposes its boxes as a Layout."""
        layout = records[0].layout()
        assert layout.elements == GOLDEN_ELEMENTS
        assert layout.texts == ("a", "b", "c", "d")


class TestLoadGrayscale:
    """Test grayscale image loading."""

    @pytest.fixture
    def temp_dir(self):
        """Create a temporary directory for test files."""
        temp_dir = tempfile.mkdtemp()
        yield temp_dir
        shutil.rmtree(temp_dir)

    def test_range_and_resize(self, temp_dir):
        """Test pixels are scaled to [0, 1] and resized on request."""
        path = os.path.join(temp_dir, 'img.png')
        write_image(path, width=40, height=20, value=255)
        image = load_grayscale(path)
        assert image.shape == (20, 40)
        np.testing.assert_allclose(image, 1.0)
        assert load_grayscale(path, (10, 5)).shape == (5, 10)

    def test_missing_file(self, temp_dir):
        """Test a missing image raises a domain error."""
        with pytest.raises(FileNotFoundError):
            load_grayscale(os.path.join(temp_dir, 'missing.png'))


if __name__ == '__main__':
    pytest.main([__file__])
