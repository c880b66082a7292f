# Render layouts as SVG/PNG overlays and build text-region masks

import base64
from dataclasses import dataclass, field
import json
import os
import sys
from typing import Optional
from xml.sax.saxutils import escape, quoteattr

import cv2
import numpy as np
from tqdm import tqdm

from layout_core import CATEGORY_ORDER, Category, Layout

DEFAULT_COLORS = {
    Category.LOGO: "#FF0000",
    Category.TEXT: "#00FF00",
    Category.UNDERLAY: "#0000FF",
    Category.EMBELLISHMENT: "#FFA500",
}


@dataclass(frozen=True)
class RenderStyle:
    colors: dict = field(default_factory=lambda: dict(DEFAULT_COLORS))
    opacity: float = 0.5
    stroke_width: int = 2
    show_labels: bool = False

    def __post_init__(self):
        missing = [c.value for c in CATEGORY_ORDER if c not in self.colors]
        if missing:
            raise ValueError(f"RenderStyle has no color for: {missing}")
        if not (0.0 <= self.opacity <= 1.0):
            raise ValueError(f"opacity must lie in [0, 1], got {self.opacity}")
        if self.stroke_width < 0:
            raise ValueError(f"stroke_width must be >= 0, got {self.stroke_width}")

    def bgr(self, category):
        value = self.colors[category].lstrip("#")
        r, g, b = (int(value[i:i + 2], 16) for i in (0, 2, 4))
        return (b, g, r)


def _background_href(background):
    """Embed a background image file (or raw PNG/JPEG bytes) as a data URI."""
    if isinstance(background, (bytes, bytearray)):
        data = bytes(background)
        mime = "image/png" if data.startswith(b"\x89PNG") else "image/jpeg"
    else:
        with open(background, 'rb') as f:
            data = f.read()
        mime = "image/png" if str(background).lower().endswith(".png") else "image/jpeg"
    return f"data:{mime};base64,{base64.b64encode(data).decode('ascii')}"


def render_svg(layout, style=None, background=None):
    """
    Render a layout as a standalone SVG document.

    Args:
        layout (Layout): Layout to draw
        style (RenderStyle): Colors, opacity, stroke and labels
        background: Optional image path or encoded image bytes embedded beneath the boxes

    Returns:
        str: SVG document
    """
    style = style or RenderStyle()
    width, height = layout.canvas.width, layout.canvas.height
    lines = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}">']
    if background is not None:
        lines.append(f'<image href={quoteattr(_background_href(background))} x="0" y="0" '
                     f'width="{width}" height="{height}"/>')
    for e in layout.elements:
        color = style.colors[e.category]
        lines.append(f'<rect data-category="{e.category.value}" x="{e.x}" y="{e.y}" width="{e.w}" height="{e.h}" '
                     f'fill="{color}" fill-opacity="{style.opacity}" stroke="{color}" '
                     f'stroke-width="{style.stroke_width}"/>')
        if style.show_labels:
            lines.append(f'<text x="{e.x + 2}" y="{e.y + 12}" font-size="12" fill="{color}">'
                         f'{escape(e.category.value)}</text>')
    lines.append('</svg>')
    return "\n".join(lines) + "\n"


def rasterize_png(layout, style=None, background=None):
    """Draw the overlay at canvas resolution; returns a BGR uint8 image."""
    style = style or RenderStyle()
    width, height = layout.canvas.width, layout.canvas.height
    if background is None:
        canvas = np.full((height, width, 3), 255, dtype=np.uint8)
    else:
        canvas = cv2.resize(np.asarray(background, dtype=np.uint8), (width, height), interpolation=cv2.INTER_AREA)
        if canvas.ndim == 2:
            canvas = cv2.cvtColor(canvas, cv2.COLOR_GRAY2BGR)
    for e in layout.elements:
        if e.w == 0 or e.h == 0:
            continue
        fill = canvas.copy()
        cv2.rectangle(fill, (e.x, e.y), (e.x + e.w - 1, e.y + e.h - 1), style.bgr(e.category), thickness=-1)
        canvas = cv2.addWeighted(fill, style.opacity, canvas, 1.0 - style.opacity, 0)
        if style.stroke_width > 0:
            cv2.rectangle(canvas, (e.x, e.y), (e.x + e.w - 1, e.y + e.h - 1), style.bgr(e.category),
                          thickness=style.stroke_width)
        if style.show_labels:
            cv2.putText(canvas, e.category.value, (e.x + 2, e.y + 12), cv2.FONT_HERSHEY_SIMPLEX, 0.4,
                        style.bgr(e.category), 1, cv2.LINE_AA)
    return canvas


def build_text_mask(layout, dilation=0):
    """Binary canvas-sized mask: 1 inside any Text box, else 0; optional square dilation in pixels."""
    mask = np.zeros(layout.canvas.shape, dtype=np.uint8)
    for e in layout.elements:
        if e.category == Category.TEXT:
            mask[e.y:e.y + e.h, e.x:e.x + e.w] = 1
    if dilation > 0:
        kernel = np.ones((2 * dilation + 1, 2 * dilation + 1), dtype=np.uint8)
        mask = cv2.dilate(mask, kernel)
    return mask


def save_mask_png(mask, path):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    if not cv2.imwrite(path, (mask > 0).astype(np.uint8) * 255, [cv2.IMWRITE_PNG_BILEVEL, 1]):
        raise IOError(f"Could not write mask {path}")
    return path


def save_contact_sheet(images, titles, path, columns=4):
    """Grid preview of rendered overlays (BGR arrays) saved with matplotlib."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = max(1, -(-len(images) // columns))
    fig, axes = plt.subplots(rows, columns, figsize=(3 * columns, 4 * rows), squeeze=False)
    for ax in axes.flat:
        ax.axis('off')
    for ax, image, title in zip(axes.flat, images, titles):
        ax.imshow(cv2.cvtColor(image, cv2.COLOR_BGR2RGB))
        ax.set_title(title, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def load_layouts(path):
    """
    Read (id, layout) pairs from SampleRecord JSONL or a generation ledger.

    Ledger entries without a parsed layout are skipped.
    """
    from dataset_io import SampleRecord
    from gen_harness import LedgerEntry

    pairs = []
    with open(path, 'r', encoding='utf-8') as f:
        for line in f:
            if not line.strip():
                continue
            data = json.loads(line)
            if "schema_version" in data:
                record = SampleRecord.from_dict(data)
                pairs.append((record.id, record.layout()))
            else:
                entry = LedgerEntry.from_dict(data)
                if entry.ok:
                    pairs.append((entry.sample_id.replace(":", "_"), entry.layout()))
    return pairs


def render_batch(pairs, out_dir, assets_root=None, style=None, masks=False, png=False, dilation=0,
                 contact_sheet=False):
    """
    Write `<id>.svg` (and optionally `<id>.png`, `<id>.mask.png`) per layout.

    Returns:
        dict: Counts of files written
    """
    from dataset_io import resolve_asset

    os.makedirs(out_dir, exist_ok=True)
    counts = {"svg": 0, "png": 0, "mask": 0, "missing_background": 0}
    previews = []
    for sample_id, layout in tqdm(pairs, desc="Rendering"):
        background_path: Optional[str] = None
        if assets_root:
            background_path = resolve_asset(assets_root, layout.canvas.image_ref)
            if background_path is None:
                counts["missing_background"] += 1
        with open(os.path.join(out_dir, f"{sample_id}.svg"), 'w', encoding='utf-8') as f:
            f.write(render_svg(layout, style, background_path))
        counts["svg"] += 1
        if png or contact_sheet:
            background = cv2.imread(background_path, cv2.IMREAD_COLOR) if background_path else None
            image = rasterize_png(layout, style, background)
            if png:
                cv2.imwrite(os.path.join(out_dir, f"{sample_id}.png"), image)
                counts["png"] += 1
            previews.append((image, sample_id))
        if masks:
            save_mask_png(build_text_mask(layout, dilation), os.path.join(out_dir, f"{sample_id}.mask.png"))
            counts["mask"] += 1
    if contact_sheet and previews:
        save_contact_sheet([p[0] for p in previews], [p[1] for p in previews],
                           os.path.join(out_dir, "contact_sheet.png"))
    return counts


def main():
    import argparse

    parser = argparse.ArgumentParser(description='Render layouts as SVG/PNG overlays and text masks')
    parser.add_argument('--layouts', required=True, help='SampleRecord JSONL or ledger JSONL')
    parser.add_argument('--assets', default=None, help='Root directory for canvas images')
    parser.add_argument('--out', required=True, help='Output directory')
    parser.add_argument('--masks', action='store_true', help='Also write <id>.mask.png text masks')
    parser.add_argument('--dilate', type=int, default=0, help='Text mask dilation radius in pixels')
    parser.add_argument('--png', action='store_true', help='Also rasterize <id>.png overlays')
    parser.add_argument('--labels', action='store_true', help='Draw category labels')
    parser.add_argument('--contact-sheet', action='store_true', help='Write a contact_sheet.png preview grid')
    args = parser.parse_args()

    if not os.path.isfile(args.layouts):
        print(f"ERROR: Layout file {args.layouts} does not exist.")
        return 1
    try:
        pairs = load_layouts(args.layouts)
        print(f"🚀 Rendering {len(pairs)} layout(s) to {args.out}")
        counts = render_batch(pairs, args.out, args.assets, RenderStyle(show_labels=args.labels),
                              masks=args.masks, png=args.png, dilation=args.dilate,
                              contact_sheet=args.contact_sheet)
    except Exception as e:
        print(f"❌ Rendering failed: {e}")
        return 1
    if counts["missing_background"]:
        print(f"⚠️  {counts['missing_background']} canvas image(s) not found; rendered without background")
    print(f"✅ Wrote {counts['svg']} SVG, {counts['png']} PNG, {counts['mask']} mask file(s)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
