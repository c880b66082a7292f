"""
Layout evaluation metrics.

Graphic metrics (validity, overlap, alignment, underlay), the Frechet distance
between feature sets, content metrics over canvas images (occlusion,
readability) and the region-overlap leakage probe. Every per-layout metric
uses valid elements only.
"""

from dataclasses import asdict, dataclass
import json
import math
import os
from typing import Optional, Sequence
import warnings

import cv2
import numpy as np
from scipy import linalg

from layout_core import CATEGORY_ORDER, Box, Category, Layout, LayoutDomainError

RIDGE = 1e-6
EIGEN_TOLERANCE = 1e-10
DEFAULT_MAX_ELEMS = 25
FEATURES_PER_ELEMENT = len(CATEGORY_ORDER) + 4

# Table column order
REPORT_COLUMNS = ("val", "ove", "ali", "und_l", "und_s", "fd", "rea", "occ")

# Real-data rows for side-by-side printing
REFERENCE_ROWS = {
    "cgl": {"val": 0.9839, "ove": 0.0002, "ali": 0.0017, "und_l": 0.9937, "und_s": 0.9884,
            "fd": None, "rea": 0.2059, "occ": 0.1399},
    "pku": {"val": 0.9997, "ove": 0.0013, "ali": 0.0021, "und_l": 0.9974, "und_s": 0.9909,
            "fd": None, "rea": 0.1729, "occ": 0.1828},
}


class UndefinedMetricError(ValueError):
    """Raised when an aggregate metric has nothing to aggregate."""


@dataclass
class MetricReport:
    val: Optional[float]
    ove: float
    ali: float
    und_l: Optional[float]
    und_s: Optional[float]
    fd: Optional[float]
    rea: Optional[float]
    occ: Optional[float]
    n_samples: int
    n_failures: int
    utilization: Optional[float] = None
    leakage: Optional[float] = None

    @property
    def failure_rate(self):
        return self.n_failures / self.n_samples if self.n_samples else 0.0

    def to_dict(self):
        data = asdict(self)
        data["failure_rate"] = self.failure_rate
        return data

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def to_table(self, reference=None):
        """Aligned plain-text table in val/ove/ali/und_l/und_s/FD/rea/occ order."""
        header = ["", *[c.upper() if c == "fd" else c for c in REPORT_COLUMNS], "fail"]
        rows = [["generated", *[_fmt(getattr(self, c)) for c in REPORT_COLUMNS],
                 f"{self.n_failures}/{self.n_samples}"]]
        if reference is not None:
            ref = REFERENCE_ROWS[reference]
            rows.append([f"real ({reference})", *[_fmt(ref[c]) for c in REPORT_COLUMNS], "-"])
        widths = [max(len(r[i]) for r in [header, *rows]) for i in range(len(header))]
        lines = ["  ".join(cell.rjust(w) for cell, w in zip(row, widths)) for row in [header, *rows]]
        return "\n".join(lines) + "\n"


def _fmt(value):
    return "-" if value is None else f"{value:.4f}"


def write_report(report, json_path, table_path=None, reference=None):
    os.makedirs(os.path.dirname(os.path.abspath(json_path)), exist_ok=True)
    with open(json_path, 'w', encoding='utf-8') as f:
        f.write(report.to_json() + "\n")
    if table_path:
        with open(table_path, 'w', encoding='utf-8') as f:
            f.write(report.to_table(reference))
    return json_path


def _mean(values):
    values = list(values)
    return math.fsum(values) / len(values) if values else 0.0


def validity(layouts: Sequence[Layout]):
    total = 0
    valid = 0
    for layout in layouts:
        total += len(layout.elements)
        valid += len(layout.valid_elements())
    if total == 0:
        raise UndefinedMetricError("validity is undefined over zero elements")
    return valid / total


def overlap(layout):
    """Mean over ordered pairs of non-Underlay valid elements of area(bi & bj) / area(bi)."""
    boxes = [e.box for e in layout.valid_elements() if e.category != Category.UNDERLAY]
    if len(boxes) < 2:
        return 0.0
    ratios = [a.intersection_area(b) / a.area
              for i, a in enumerate(boxes) for j, b in enumerate(boxes) if i != j]
    return _mean(ratios)


def _alignment_lines(element, canvas):
    x, y, w, h = element.x / canvas.width, element.y / canvas.height, element.w / canvas.width, element.h / canvas.height
    return np.array([x, x + w / 2, x + w, y, y + h / 2, y + h])


def alignment(layout):
    elements = layout.valid_elements()
    if len(elements) < 2:
        return 0.0
    lines = np.stack([_alignment_lines(e, layout.canvas) for e in elements])  # (n, 6)
    dist = np.abs(lines[:, None, :] - lines[None, :, :])  # (n, n, 6)
    idx = np.arange(len(elements))
    dist[idx, idx, :] = np.inf
    per_element = dist.min(axis=1).min(axis=1)
    return _mean(per_element.tolist())


def underlay_scores(layout):
    """Per-Underlay (loose, strict) scores; empty list when the layout has no valid Underlay."""
    elements = layout.valid_elements()
    underlays = [e.box for e in elements if e.category == Category.UNDERLAY]
    others = [e.box for e in elements if e.category != Category.UNDERLAY]
    scores = []
    for u in underlays:
        best = 0.0
        strict = False
        for e in others:
            inter = u.intersection_area(e)
            best = max(best, inter / e.area)
            strict = strict or inter == e.area
        scores.append((best, 1.0 if strict else 0.0))
    return scores


def underlay(layout):
    """Return (und_l, und_s) for one layout, or None when it has no valid Underlay."""
    scores = underlay_scores(layout)
    if not scores:
        return None
    return _mean(s[0] for s in scores), _mean(s[1] for s in scores)


def utilization(layout):
    return float(union_mask(layout.valid_elements(), layout.canvas).mean())


def union_mask(elements, canvas):
    mask = np.zeros(canvas.shape, dtype=bool)
    for e in elements:
        mask[e.y:e.y + e.h, e.x:e.x + e.w] = True
    return mask


def _check_image(image, canvas, name):
    if image.ndim != 2 or image.shape != canvas.shape:
        raise LayoutDomainError(f"{name} shape {image.shape} does not match canvas {canvas.shape}")


def occlusion(layout, saliency):
    """Mean saliency over the pixel union of all valid element boxes (0 when empty)."""
    saliency = np.asarray(saliency, dtype=np.float64)
    _check_image(saliency, layout.canvas, "saliency")
    mask = union_mask(layout.valid_elements(), layout.canvas)
    if not mask.any():
        return 0.0
    return float(saliency[mask].mean())


def gradient_magnitude(image):
    """Central-difference gradient magnitude with replicated borders."""
    image = np.asarray(image, dtype=np.float64)
    kernel = np.array([[-0.5, 0.0, 0.5]], dtype=np.float64)
    gx = cv2.filter2D(image, cv2.CV_64F, kernel, borderType=cv2.BORDER_REPLICATE)
    gy = cv2.filter2D(image, cv2.CV_64F, kernel.T, borderType=cv2.BORDER_REPLICATE)
    return np.hypot(gx, gy)


def readability(layout, canvas_image):
    """Mean gradient magnitude under valid Text boxes; None when the layout has none."""
    canvas_image = np.asarray(canvas_image, dtype=np.float64)
    _check_image(canvas_image, layout.canvas, "canvas image")
    texts = [e for e in layout.valid_elements() if e.category == Category.TEXT]
    if not texts:
        return None
    mask = union_mask(texts, layout.canvas)
    return float(gradient_magnitude(canvas_image)[mask].mean())


def leakage_probe(generated, inpainted_regions, iou_threshold=0.5):
    """
    Fraction of generated elements whose IoU with some inpainted region exceeds the threshold.

    Args:
        generated (list): Generated layouts
        inpainted_regions (list): Per layout, a list of (x, y, w, h) rectangles
        iou_threshold (float): IoU above which an element counts as leaked

    Returns:
        float: Leaked fraction in [0, 1]
    """
    if len(generated) != len(inpainted_regions):
        raise LayoutDomainError(f"{len(generated)} layouts but {len(inpainted_regions)} region lists")
    total = 0
    hits = 0
    for layout, regions in zip(generated, inpainted_regions):
        boxes = [Box(*r) for r in regions]
        for element in layout.elements:
            total += 1
            if any(element.box.iou(r) > iou_threshold for r in boxes):
                hits += 1
    return hits / total if total else 0.0


class FeatureSet:
    """Fixed-length feature vectors, one row per layout."""

    def __init__(self, vectors):
        array = np.asarray(vectors, dtype=np.float64)
        if array.ndim == 1:
            array = array.reshape(-1, 1)
        if array.ndim != 2:
            raise LayoutDomainError(f"FeatureSet needs a 2-d array of vectors, got shape {array.shape}")
        self.vectors = array

    def __len__(self):
        return self.vectors.shape[0]

    @property
    def dim(self):
        return self.vectors.shape[1]

    def fit(self):
        """Mean and unbiased covariance, with ridge shrinkage when rank-deficient."""
        if len(self) < 2:
            raise LayoutDomainError(f"Need at least 2 vectors to fit a covariance, got {len(self)}")
        mu = self.vectors.mean(axis=0)
        sigma = np.atleast_2d(np.cov(self.vectors, rowvar=False, ddof=1))
        if len(self) <= self.dim or np.linalg.matrix_rank(sigma) < self.dim:
            warnings.warn(f"Rank-deficient covariance ({len(self)} vectors, dim {self.dim}); adding {RIDGE}*I")
            sigma = sigma + RIDGE * np.eye(self.dim)
        return mu, sigma


def _sqrt_psd(matrix):
    eigvals, eigvecs = linalg.eigh(matrix)
    eigvals = np.clip(eigvals, 0.0, None)
    return (eigvecs * np.sqrt(eigvals)) @ eigvecs.T


def frechet_distance_from_stats(mu_a, sigma_a, mu_b, sigma_b):
    """
    Frechet distance between two Gaussians.

    Tr((Sa Sb)^1/2) is evaluated as the sum of square-rooted eigenvalues of the
    symmetric matrix Sa^1/2 Sb Sa^1/2, which has the same spectrum.
    """
    mu_a, mu_b = np.atleast_1d(mu_a), np.atleast_1d(mu_b)
    sigma_a, sigma_b = np.atleast_2d(sigma_a), np.atleast_2d(sigma_b)
    if mu_a.shape != mu_b.shape or sigma_a.shape != sigma_b.shape:
        raise LayoutDomainError(f"Dimension mismatch: {mu_a.shape} vs {mu_b.shape}")
    root_a = _sqrt_psd(sigma_a)
    product = root_a @ sigma_b @ root_a
    product = (product + product.T) / 2
    eigvals = linalg.eigh(product, eigvals_only=True)
    scale = max(1.0, float(np.abs(eigvals).max())) if eigvals.size else 1.0
    if eigvals.size and eigvals.min() < -EIGEN_TOLERANCE * scale:
        warnings.warn(f"Covariance product has a negative eigenvalue {eigvals.min():.3e}; clipped to 0")
    eigvals = np.clip(eigvals, 0.0, None)
    trace_sqrt = math.fsum(np.sqrt(eigvals).tolist())
    diff = mu_a - mu_b
    value = float(diff @ diff) + float(np.trace(sigma_a)) + float(np.trace(sigma_b)) - 2.0 * trace_sqrt
    return max(value, 0.0)


def frechet_distance(a, b):
    if not isinstance(a, FeatureSet):
        a = FeatureSet(a)
    if not isinstance(b, FeatureSet):
        b = FeatureSet(b)
    if a.dim != b.dim:
        raise LayoutDomainError(f"Feature dimension mismatch: {a.dim} vs {b.dim}")
    return frechet_distance_from_stats(*a.fit(), *b.fit())


def _sort_key(element):
    return (element.y, element.x, CATEGORY_ORDER.index(element.category), element.w, element.h)


def geometric_featurizer(layout, max_elems=DEFAULT_MAX_ELEMS):
    """
    Deterministic layout feature vector.

    Returns:
        tuple: (vector of length max_elems * 8, truncated flag)
    """
    vector = np.zeros(max_elems * FEATURES_PER_ELEMENT, dtype=np.float64)
    elements = sorted(layout.elements, key=_sort_key)
    truncated = len(elements) > max_elems
    if truncated:
        warnings.warn(f"Layout has {len(elements)} elements; featurizer keeps the first {max_elems}")
    width, height = layout.canvas.width, layout.canvas.height
    for slot, e in enumerate(elements[:max_elems]):
        offset = slot * FEATURES_PER_ELEMENT
        vector[offset + CATEGORY_ORDER.index(e.category)] = 1.0
        vector[offset + 4:offset + 8] = (e.x / width, e.y / height, e.w / width, e.h / height)
    return vector, truncated


def featurize_layouts(layouts, max_elems=DEFAULT_MAX_ELEMS, valid_only=True):
    vectors = []
    truncated = 0
    for layout in layouts:
        if valid_only:
            layout = layout.with_elements(layout.valid_elements())
        vector, was_truncated = geometric_featurizer(layout, max_elems)
        vectors.append(vector)
        truncated += int(was_truncated)
    return FeatureSet(np.stack(vectors) if vectors else np.zeros((0, max_elems * FEATURES_PER_ELEMENT))), truncated


def compute_report(layouts, n_samples=None, n_failures=0, reference_layouts=None, saliency_maps=None,
                   canvas_images=None, max_elems=DEFAULT_MAX_ELEMS, leakage=None):
    """
    Aggregate every applicable metric over a set of layouts.

    Args:
        layouts (list): Successfully parsed layouts
        n_samples (int): Samples dispatched (defaults to len(layouts))
        n_failures (int): Samples that produced no layout
        reference_layouts (list): Real layouts for FD; FD is None when absent
        saliency_maps (list): Per layout, a saliency array or None
        canvas_images (list): Per layout, a grayscale canvas array or None
        max_elems (int): Featurizer capacity
        leakage (float): Pre-computed leakage probe value, carried through

    Returns:
        MetricReport
    """
    layouts = list(layouts)
    if not layouts:
        raise UndefinedMetricError("no successfully parsed layouts to evaluate")

    und = [u for u in (underlay(l) for l in layouts) if u is not None]
    fd = None
    if reference_layouts is not None:
        generated_set, _ = featurize_layouts(layouts, max_elems)
        real_set, _ = featurize_layouts(reference_layouts, max_elems)
        if len(generated_set) >= 2 and len(real_set) >= 2:
            fd = frechet_distance(generated_set, real_set)
        else:
            warnings.warn("FD needs at least two layouts per set; skipped")

    occ = None
    if saliency_maps is not None:
        values = [occlusion(l, s) for l, s in zip(layouts, saliency_maps) if s is not None]
        occ = _mean(values) if values else None
    rea = None
    if canvas_images is not None:
        values = [readability(l, img) for l, img in zip(layouts, canvas_images) if img is not None]
        values = [v for v in values if v is not None]
        rea = _mean(values) if values else None

    return MetricReport(
        val=validity(layouts) if any(l.elements for l in layouts) else None,
        ove=_mean(overlap(l) for l in layouts),
        ali=_mean(alignment(l) for l in layouts),
        und_l=_mean(u[0] for u in und) if und else None,
        und_s=_mean(u[1] for u in und) if und else None,
        fd=fd, rea=rea, occ=occ,
        n_samples=len(layouts) + n_failures if n_samples is None else n_samples,
        n_failures=n_failures,
        utilization=_mean(utilization(l) for l in layouts),
        leakage=leakage,
    )
