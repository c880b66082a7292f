import pytest
import numpy as np
import tempfile
import shutil
import json
import os
import sys
from scipy import linalg

# Add src directory to path for imports
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from layout_core import CATEGORY_ORDER, Canvas, Category, Element, Layout, LayoutDomainError
from metrics import (
    FeatureSet, MetricReport, UndefinedMetricError, alignment, compute_report, frechet_distance,
    geometric_featurizer, leakage_probe, occlusion, overlap, readability, underlay, utilization, validity,
    write_report,
)

GRID = Canvas(512, 512)


def box_mask(element, canvas=GRID):
    """Pixel-count rasterization used as the oracle for the analytic metrics."""
    rows = np.arange(canvas.height)[:, None]
    cols = np.arange(canvas.width)[None, :]
    return ((cols >= element.x) & (cols < element.x + element.w)
            & (rows >= element.y) & (rows < element.y + element.h))


def random_layout(rng, canvas=GRID, n_max=5, categories=CATEGORY_ORDER):
    elements = []
    for _ in range(int(rng.integers(1, n_max + 1))):
        w = int(rng.integers(20, min(300, canvas.width)))
        h = int(rng.integers(20, min(300, canvas.height)))
        x = int(rng.integers(0, canvas.width - w + 1))
        y = int(rng.integers(0, canvas.height - h + 1))
        elements.append(Element(categories[int(rng.integers(0, len(categories)))], x, y, w, h))
    return Layout(canvas, tuple(elements))


def whitened(rng, n, d):
    """n samples in d dimensions with empirical mean 0 and unbiased covariance exactly I."""
    x = rng.normal(size=(n, d))
    x -= x.mean(axis=0)
    chol = np.linalg.cholesky(np.atleast_2d(np.cov(x, rowvar=False, ddof=1)))
    return x @ np.linalg.inv(chol).T


class TestGraphicMetrics:
    """Test validity, overlap, alignment and underlay metrics."""

    def test_validity(self):
        """Test validity counts valid elements over all elements."""
        canvas = Canvas(100, 100)
        layout = Layout(canvas, (Element(Category.TEXT, 0, 0, 10, 10), Element(Category.LOGO, 0, 0, 20, 20),
                                 Element(Category.TEXT, 50, 50, 10, 10), Element(Category.TEXT, 0, 0, 2, 1)))
        assert validity([layout]) == 0.75

    def test_validity_undefined_on_empty(self):
        """Test validity of zero elements raises UndefinedMetricError."""
        with pytest.raises(UndefinedMetricError):
            validity([Layout(Canvas(10, 10), ())])

    def test_overlap_examples(self):
        """Test overlap on hand-computed examples."""
        canvas = Canvas(200, 200)
        b1 = Element(Category.TEXT, 0, 0, 100, 100)
        assert overlap(Layout(canvas, (b1, b1))) == 1.0
        assert overlap(Layout(canvas, (b1, Element(Category.TEXT, 100, 100, 50, 50)))) == 0.0
        assert overlap(Layout(canvas, (b1, Element(Category.LOGO, 50, 0, 100, 100)))) == pytest.approx(0.5)
        assert overlap(Layout(canvas, (b1, Element(Category.UNDERLAY, 0, 0, 100, 100)))) == 0.0

    def test_alignment_examples(self):
        """Test alignment on hand-computed examples."""
        canvas = Canvas(100, 100)
        shared_left = (Element(Category.TEXT, 10, 0, 20, 10), Element(Category.LOGO, 10, 50, 40, 20))
        assert alignment(Layout(canvas, shared_left)) == 0.0
        assert alignment(Layout(canvas, shared_left[:1])) == 0.0
        near = (Element(Category.TEXT, 0, 0, 10, 10), Element(Category.TEXT, 1, 50, 30, 10))
        assert alignment(Layout(canvas, near)) == pytest.approx(0.01)

    def test_underlay_examples(self):
        """Test loose and strict underlay on hand-computed examples."""
        canvas = Canvas(200, 200)
        u = Element(Category.UNDERLAY, 0, 0, 100, 100)
        assert underlay(Layout(canvas, (u, Element(Category.TEXT, 10, 10, 20, 20)))) == (1.0, 1.0)
        assert underlay(Layout(canvas, (u, Element(Category.TEXT, 80, 10, 40, 20)))) == (0.5, 0.0)
        assert underlay(Layout(canvas, (u, Element(Category.TEXT, 150, 150, 20, 20)))) == (0.0, 0.0)
        assert underlay(Layout(canvas, (Element(Category.TEXT, 10, 10, 20, 20),))) is None

    def test_invalid_elements_are_ignored(self):
        """Test invalid elements do not affect the metrics."""
        canvas = Canvas(1000, 1000)
        speck = Element(Category.TEXT, 0, 0, 5, 5)
        box = Element(Category.TEXT, 0, 0, 100, 100)
        assert overlap(Layout(canvas, (box, speck))) == 0.0

    def test_reordering_invariance(self):
        """Test metrics ignore element order."""
        rng = np.random.default_rng(8)
        for _ in range(100):
            layout = random_layout(rng, n_max=8)
            reordered = layout.with_elements(layout.elements[::-1])
            assert overlap(reordered) == pytest.approx(overlap(layout), abs=1e-12)
            assert alignment(reordered) == pytest.approx(alignment(layout), abs=1e-12)
            assert underlay(reordered) == underlay(layout)

    def test_scale_invariance(self):
        """Test metrics are unchanged when layout and canvas scale together."""
        rng = np.random.default_rng(9)
        layout = random_layout(rng, canvas=Canvas(256, 256), n_max=8)
        scaled = Layout(Canvas(512, 512), tuple(Element(e.category, 2 * e.x, 2 * e.y, 2 * e.w, 2 * e.h)
                                               for e in layout.elements))
        assert validity([scaled]) == validity([layout])
        assert underlay(scaled) == underlay(layout)


class TestRasterOracles:
    """Test analytic metrics against pixel counts."""

    def test_overlap_underlay_occlusion_match_pixel_counts(self):
        """Test overlap, underlay and occlusion match rasterized counts."""
        rng = np.random.default_rng(2024)
        for _ in range(1000):
            layout = random_layout(rng)
            saliency = rng.random(GRID.shape)
            masks = [box_mask(e) for e in layout.elements]

            others = [m for e, m in zip(layout.elements, masks) if e.category != Category.UNDERLAY]
            ratios = [(a & b).sum() / a.sum() for i, a in enumerate(others) for j, b in enumerate(others) if i != j]
            expected_overlap = float(np.mean(ratios)) if ratios else 0.0
            assert abs(overlap(layout) - expected_overlap) < 1e-2

            union = np.logical_or.reduce(masks)
            assert abs(occlusion(layout, saliency) - saliency[union].mean()) < 1e-2

            under = [m for e, m in zip(layout.elements, masks) if e.category == Category.UNDERLAY]
            if under:
                scores = [max([(u & o).sum() / o.sum() for o in others], default=0.0) for u in under]
                und_l, _ = underlay(layout)
                assert abs(und_l - float(np.mean(scores))) < 1e-2

    def test_utilization(self):
        """Test utilization against a rasterized union."""
        layout = Layout(GRID, (Element(Category.TEXT, 0, 0, 256, 512), Element(Category.LOGO, 0, 0, 256, 512)))
        assert utilization(layout) == 0.5


class TestFrechetDistance:
    """Test the Fréchet distance between feature sets."""

    def test_identical_sets(self):
        """Test identical sets are at distance zero."""
        rng = np.random.default_rng(0)
        vectors = rng.normal(size=(200, 6))
        assert frechet_distance(vectors, vectors) < 1e-9

    def test_shifted_identity_covariance(self):
        """Test a mean shift with identity covariance."""
        rng = np.random.default_rng(1)
        a = whitened(rng, 500, 4)
        b = a + np.array([3.0, 4.0, 0.0, 0.0])
        assert frechet_distance(a, b) == pytest.approx(25.0, abs=1e-6)

    def test_one_dimensional(self):
        """Test the one-dimensional closed form."""
        rng = np.random.default_rng(2)
        a = whitened(rng, 100, 1)[:, 0]
        assert frechet_distance(a, 2.0 * a) == pytest.approx(1.0, abs=1e-9)

    def test_symmetry(self):
        """Test the distance is symmetric."""
        rng = np.random.default_rng(3)
        a = rng.normal(size=(300, 5))
        b = rng.normal(1.0, 2.0, size=(300, 5))
        assert abs(frechet_distance(a, b) - frechet_distance(b, a)) < 1e-9
        assert frechet_distance(a, b) >= 0.0

    def test_gaussian_closed_form(self):
        """Test agreement with a scipy sqrtm computation."""
        rng = np.random.default_rng(4)
        mu_a, mu_b = np.zeros(3), np.array([1.0, 2.0, 0.5])
        sigma_a = np.diag([1.0, 2.0, 3.0])
        sigma_b = np.array([[2.0, 0.5, 0.0], [0.5, 1.0, 0.2], [0.0, 0.2, 1.5]])
        expected = (np.sum((mu_a - mu_b) ** 2) + np.trace(sigma_a) + np.trace(sigma_b)
                    - 2.0 * np.trace(linalg.sqrtm(sigma_a @ sigma_b)).real)
        a = rng.multivariate_normal(mu_a, sigma_a, size=10000)
        b = rng.multivariate_normal(mu_b, sigma_b, size=10000)
        assert frechet_distance(a, b) == pytest.approx(expected, rel=0.02)

    def test_errors(self):
        """Test dimension mismatches and tiny sets are rejected."""
        with pytest.raises(LayoutDomainError):
            frechet_distance(np.zeros((5, 3)), np.zeros((5, 4)))
        with pytest.raises(LayoutDomainError):
            frechet_distance(np.zeros((1, 3)), np.zeros((5, 3)))

    def test_rank_deficient_fit_warns(self):
        """Test a rank-deficient covariance warns and still returns."""
        with pytest.warns(UserWarning):
            mu, sigma = FeatureSet(np.ones((3, 4))).fit()
        np.testing.assert_allclose(np.diag(sigma), 1e-6)


class TestFeaturizer:
    """Test layout featurization for FD."""

    def test_empty_layout(self):
        """Test an empty layout featurizes to zeros."""
        vector, truncated = geometric_featurizer(Layout(GRID, ()), max_elems=2)
        np.testing.assert_array_equal(vector, np.zeros(16))
        assert not truncated

    def test_full_canvas_logo(self):
        """Test a full-canvas Logo feature vector."""
        vector, _ = geometric_featurizer(Layout(GRID, (Element(Category.LOGO, 0, 0, 512, 512),)), max_elems=2)
        np.testing.assert_array_equal(vector, [1, 0, 0, 0, 0, 0, 1, 1] + [0] * 8)

    def test_order_invariance(self):
        """Test features ignore element order."""
        rng = np.random.default_rng(6)
        layout = random_layout(rng, n_max=8)
        shuffled = layout.with_elements([layout.elements[i] for i in rng.permutation(len(layout))])
        np.testing.assert_array_equal(geometric_featurizer(layout)[0], geometric_featurizer(shuffled)[0])

    def test_truncation_flag(self):
        """Test layouts beyond max_elems are flagged."""
        elements = tuple(Element(Category.TEXT, 10 * i, 0, 10, 10) for i in range(4))
        with pytest.warns(UserWarning):
            vector, truncated = geometric_featurizer(Layout(GRID, elements), max_elems=2)
        assert truncated
        assert vector.shape == (16,)


class TestContentMetrics:
    """Test occlusion and readability."""

    @pytest.fixture
    def canvas(self):
        return Canvas(100, 100)

    def test_occlusion_uniform(self, canvas):
        """Test occlusion over a uniform saliency map."""
        layout = Layout(canvas, (Element(Category.TEXT, 10, 10, 30, 30),))
        assert occlusion(layout, np.ones(canvas.shape)) == 1.0
        assert occlusion(layout, np.zeros(canvas.shape)) == 0.0

    def test_occlusion_half_bright(self, canvas):
        """Test occlusion over a half-bright saliency map."""
        saliency = np.zeros(canvas.shape)
        saliency[:, :50] = 1.0
        assert occlusion(Layout(canvas, (Element(Category.LOGO, 0, 0, 50, 100),)), saliency) == 1.0
        assert occlusion(Layout(canvas, (Element(Category.LOGO, 25, 0, 50, 100),)), saliency) == 0.5

    def test_occlusion_shape_mismatch(self, canvas):
        """Test a saliency map of the wrong shape is rejected."""
        with pytest.raises(LayoutDomainError):
            occlusion(Layout(canvas, ()), np.zeros((10, 10)))

    def test_readability_constant_and_ramp(self, canvas):
        """Test readability on flat and ramp images."""
        layout = Layout(canvas, (Element(Category.TEXT, 10, 10, 20, 20),))
        assert readability(layout, np.full(canvas.shape, 0.3)) == 0.0
        ramp = np.tile(np.arange(canvas.width) / (canvas.width - 1), (canvas.height, 1))
        assert readability(layout, ramp) == pytest.approx(1 / 99, abs=1e-9)
        assert readability(layout, 2 * ramp) == pytest.approx(2 / 99, abs=1e-9)

    def test_readability_without_text(self, canvas):
        """Test readability is undefined without Text elements."""
        layout = Layout(canvas, (Element(Category.LOGO, 10, 10, 20, 20),))
        assert readability(layout, np.zeros(canvas.shape)) is None


class TestLeakageProbe:
    """Test the inpainting leakage metric."""

    def test_examples(self):
        """Test boxes over and away from inpainted regions."""
        canvas = Canvas(1000, 1000)
        elements = (Element(Category.TEXT, 0, 0, 100, 100), Element(Category.TEXT, 500, 500, 50, 50),
                    Element(Category.LOGO, 700, 0, 50, 50), Element(Category.LOGO, 0, 700, 50, 50))
        layout = Layout(canvas, elements)
        assert leakage_probe([layout], [[]]) == 0.0
        assert leakage_probe([layout], [[(0, 0, 60, 100)]]) == 0.25
        planted = [[(e.x, e.y, e.w, e.h) for e in elements]]
        assert leakage_probe([layout], planted) == 1.0
        assert leakage_probe([layout], [[(900, 900, 50, 50)]]) == 0.0

    def test_misaligned_inputs(self):
        """Test mismatched list lengths are rejected."""
        with pytest.raises(LayoutDomainError):
            leakage_probe([Layout(Canvas(10, 10), ())], [])


class TestReport:
    """Test report aggregation and output files."""

    @pytest.fixture
    def temp_dir(self):
        """Create a temporary directory for test files."""
        temp_dir = tempfile.mkdtemp()
        yield temp_dir
        shutil.rmtree(temp_dir)

    def test_aggregation_is_order_independent(self):
        """Test the report ignores layout order."""
        rng = np.random.default_rng(10)
        layouts = [random_layout(rng, n_max=8) for _ in range(50)]
        forward = compute_report(layouts, n_failures=2)
        backward = compute_report(layouts[::-1], n_failures=2)
        assert forward.to_dict() == backward.to_dict()
        assert forward.n_samples == 52
        assert forward.failure_rate == pytest.approx(2 / 52)

    def test_fd_against_itself_is_zero(self):
        """Test FD of a set against itself is zero."""
        rng = np.random.default_rng(12)
        layouts = [random_layout(rng, n_max=8) for _ in range(40)]
        report = compute_report(layouts, reference_layouts=layouts)
        assert report.fd < 1e-9

    def test_no_layouts(self):
        """Test an empty report raises UndefinedMetricError."""
        with pytest.raises(UndefinedMetricError):
            compute_report([])

    def test_validity_undefined_without_elements(self):
        """Layouts with no elements leave val unset instead of reporting zero."""
        report = compute_report([Layout(Canvas(513, 750), ()), Layout(Canvas(513, 750), ())])
        assert report.val is None
        assert report.to_dict()["val"] is None
        assert report.to_table().splitlines()[1].split()[1] == "-"

    def test_written_files(self, temp_dir):
        """Test report.json and the aligned table."""
        report = MetricReport(val=1.0, ove=0.0, ali=0.001, und_l=None, und_s=None, fd=0.0, rea=None, occ=0.2,
                              n_samples=3, n_failures=0)
        json_path = write_report(report, os.path.join(temp_dir, 'report.json'),
                                 os.path.join(temp_dir, 'report.txt'), reference='cgl')
        with open(json_path, 'r', encoding='utf-8') as f:
            data = json.load(f)
        assert data["und_l"] is None
        assert data["failure_rate"] == 0.0
        with open(os.path.join(temp_dir, 'report.txt'), 'r', encoding='utf-8') as f:
            table = f.read()
        assert "real (cgl)" in table
        assert "0.9839" in table
        assert table.splitlines()[0].split() == ["val", "ove", "ali", "und_l", "und_s", "FD", "rea", "occ", "fail"]


if __name__ == '__main__':
    pytest.main([__file__])
