"""
HTML layout codec.

Serializes layouts into the fixed HTML/SVG prompt template, parses model output
back into layouts, and assembles complete prompts. The template bytes are a wire
contract with the completion backend: trailing spaces on the envelope lines are
significant.
"""

from dataclasses import dataclass
from enum import Enum
import re
from typing import Optional, Sequence

from layout_core import (
    ATTRIBUTES, MASK, MASK_TEXT, Category, Element, Layout, LayoutDomainError,
    MaskedElement, profile_categories,
)

HTML_OPEN = "<html> "
BODY_OPEN = "<body>  "
SVG_OPEN = '<svg width = "{width}", height = "{height}">'
SVG_CLOSE = "</svg> "
BODY_CLOSE = "</body>"
HTML_CLOSE = "</html>"
RECT_LINE = '<rect data-category="{category}", x="{x}", y="{y}", width="{w}", height="{h}"/>'

BBOX_MARKER = "###bbox html:"
TEXT_CONSTRAINT_PREFIX = "Text :  "
TEXT_CONSTRAINT_JOIN = " & "

# rect attribute name -> element field
RECT_ATTRIBUTES = {"data-category": "category", "x": "x", "y": "y", "width": "w", "height": "h"}

# Integers longer than this cannot fit any canvas and are reported as overflow
MAX_VALUE_DIGITS = 9

_SVG_START = re.compile(r"<svg\b", re.IGNORECASE)
_SVG_OPEN = re.compile(r"<svg\b(?:[^<>\"]|\"[^\"]*\")*>", re.IGNORECASE)
_SVG_CLOSE = re.compile(r"</svg\s*>", re.IGNORECASE)
_RECT_START = re.compile(r"<rect\b", re.IGNORECASE)
_RECT_TAG = re.compile(r"<rect\b((?:[^<>\"]|\"[^\"]*\")*)>", re.IGNORECASE)
_ATTRIBUTE = re.compile(r"([A-Za-z_:][-A-Za-z0-9_:.]*)\s*=\s*\"([^\"]*)\"")
_DIGITS = re.compile(r"[0-9]+")


class FailureKind(str, Enum):
    NONE = "none"
    ABNORMAL_FORMAT = "AbnormalFormat"
    OVERFLOW = "Overflow"


@dataclass(frozen=True)
class ParseOutcome:
    layout: Optional[Layout]
    failure_kind: FailureKind = FailureKind.NONE
    message: str = ""

    @property
    def ok(self):
        return self.failure_kind == FailureKind.NONE

    @property
    def result(self):
        return self.layout if self.ok else self.message


@dataclass(frozen=True)
class PromptParts:
    task_definition: str
    html_body: str
    text_constraint: Optional[str] = None
    image_placeholder: Optional[str] = None


def _render_value(value):
    if value is MASK:
        return MASK_TEXT
    if isinstance(value, Category):
        return value.value
    return str(value)


def serialize_elements(canvas, elements: Sequence):
    """Serialize Element or MaskedElement values on a canvas into the HTML template."""
    lines = [HTML_OPEN, BODY_OPEN, SVG_OPEN.format(width=canvas.width, height=canvas.height)]
    for element in elements:
        lines.append(RECT_LINE.format(**{name: _render_value(getattr(element, name)) for name in ATTRIBUTES}))
    lines.extend([SVG_CLOSE, BODY_CLOSE, HTML_CLOSE])
    return "\n".join(lines)


def serialize(layout, masks=None):
    """
    Serialize a layout into the HTML template.

    Args:
        layout (Layout): Layout bound to its canvas
        masks (list, optional): One collection of attribute names per element
            ("category", "x", "y", "w", "h") to render as the mask token

    Returns:
        str: Template text, lines joined by newlines, no trailing newline
    """
    if layout.texts is not None and len(layout.texts) != layout.count(Category.TEXT):
        raise LayoutDomainError("texts do not pair with the layout's Text elements")
    if masks is None:
        return serialize_elements(layout.canvas, layout.elements)
    if len(masks) != len(layout.elements):
        raise LayoutDomainError(f"Got {len(masks)} mask sets for {len(layout.elements)} elements")
    masked = []
    for element, attrs in zip(layout.elements, masks):
        unknown = set(attrs) - set(ATTRIBUTES)
        if unknown:
            raise LayoutDomainError(f"Unknown mask attributes: {sorted(unknown)}")
        masked.append(element.as_masked(attrs))
    return serialize_elements(layout.canvas, masked)


def _envelopes(text):
    """Inner text of each svg envelope in document order; a close pairs with the nearest open before it."""
    opens = [m.start() for m in _SVG_START.finditer(text)]
    for close in _SVG_CLOSE.finditer(text):
        for start in reversed([s for s in opens if s < close.start()]):
            tag = _SVG_OPEN.match(text, start)
            if tag and tag.end() <= close.start():
                yield text[tag.end():close.start()]
                break


def _envelope(text):
    """Return the inner text of the first envelope holding rects (else the first envelope), or None."""
    first = None
    for inner in _envelopes(text):
        if _RECT_START.search(inner):
            return inner
        if first is None:
            first = inner
    return first


def _scan_rects(inner):
    """
    Yield (attribute dict, error) per rect occurrence inside the envelope.
    """
    for start in _RECT_START.finditer(inner):
        tag = _RECT_TAG.match(inner, start.start())
        if tag is None:
            yield None, f"unterminated <rect at offset {start.start()}"
            continue
        attributes = {}
        for name, value in _ATTRIBUTE.findall(tag.group(1)):
            if name in RECT_ATTRIBUTES:
                if name in attributes:
                    yield None, f"duplicate attribute {name!r}"
                    break
                attributes[name] = value
        else:
            missing = [name for name in RECT_ATTRIBUTES if name not in attributes]
            if missing:
                yield None, f"missing attribute(s) {missing}"
            else:
                yield attributes, None


def _read_rects(text, allow_mask):
    """Shared rect extraction. Returns (list of field dicts, failure kind, message)."""
    inner = _envelope(text)
    if inner is None:
        return None, FailureKind.ABNORMAL_FORMAT, "no parseable svg envelope"
    rects = []
    oversized = False
    for index, (attributes, error) in enumerate(_scan_rects(inner)):
        if error:
            return None, FailureKind.ABNORMAL_FORMAT, f"rect {index}: {error}"
        fields = {}
        for attr_name, field in RECT_ATTRIBUTES.items():
            raw = attributes[attr_name].strip()
            if allow_mask and raw == MASK_TEXT:
                fields[field] = MASK
            elif field == "category":
                try:
                    fields[field] = Category(raw)
                except ValueError:
                    return None, FailureKind.ABNORMAL_FORMAT, f"rect {index}: unknown category {raw!r}"
            elif _DIGITS.fullmatch(raw) is None:
                return None, FailureKind.ABNORMAL_FORMAT, f"rect {index}: {attr_name}={raw!r} is not a non-negative integer"
            elif len(raw.lstrip("0")) > MAX_VALUE_DIGITS:
                oversized = True
                fields[field] = None
            else:
                fields[field] = int(raw)
        rects.append(fields)
    if oversized:
        return rects, FailureKind.OVERFLOW, "coordinate value exceeds any canvas"
    return rects, FailureKind.NONE, ""


def parse(text, canvas, profile="cgl"):
    """
    Parse model output into a layout on the given canvas.

    Never raises; every input maps to a success or a classified failure.
    """
    try:
        rects, kind, message = _read_rects(text if isinstance(text, str) else str(text), allow_mask=False)
        if kind == FailureKind.ABNORMAL_FORMAT:
            return ParseOutcome(None, kind, message)
        allowed = profile_categories(profile)
        for index, fields in enumerate(rects):
            if fields["category"] not in allowed:
                return ParseOutcome(None, FailureKind.ABNORMAL_FORMAT,
                                    f"rect {index}: category {fields['category'].value} not in profile {profile}")
        if kind == FailureKind.OVERFLOW:
            return ParseOutcome(None, kind, message)
        elements = []
        for index, fields in enumerate(rects):
            element = Element(**fields)
            if not element.fits(canvas):
                return ParseOutcome(None, FailureKind.OVERFLOW,
                                    f"rect {index} {element.box} exceeds canvas {canvas.width}x{canvas.height}")
            elements.append(element)
        return ParseOutcome(Layout(canvas, tuple(elements)))
    except Exception as e:  # parse is total
        return ParseOutcome(None, FailureKind.ABNORMAL_FORMAT, f"unparseable output: {e}")


def parse_masked(text, canvas):
    """Parse an input-side serialization that may contain mask tokens."""
    rects, kind, message = _read_rects(text, allow_mask=True)
    if kind != FailureKind.NONE:
        raise LayoutDomainError(f"Masked serialization is malformed: {message}")
    masked = [MaskedElement(**fields) for fields in rects]
    for element in masked:
        if element.is_concrete and not element.to_element().fits(canvas):
            raise LayoutDomainError(f"Masked serialization element {element} exceeds canvas")
    return masked


def fill_masks(masked, values):
    """Replace every masked attribute with the positionally aligned concrete value."""
    if len(masked) > len(values):
        raise LayoutDomainError(f"{len(masked)} masked elements but only {len(values)} values")
    filled = []
    for element, value in zip(masked, values):
        filled.append(Element(**{name: getattr(value if getattr(element, name) is MASK else element, name)
                                 for name in ATTRIBUTES}))
    return filled


def format_text_constraint(texts):
    if not texts:
        return None
    return TEXT_CONSTRAINT_PREFIX + TEXT_CONSTRAINT_JOIN.join(texts)


def assemble_prompt(parts):
    """Concatenate task definition, text constraint, image slot and HTML body into one prompt."""
    sections = [parts.task_definition, ""]
    if parts.text_constraint:
        sections.extend([parts.text_constraint, ""])
    if parts.image_placeholder:
        sections.append(parts.image_placeholder)
    sections.append(BBOX_MARKER)
    sections.append(parts.html_body)
    return "\n".join(sections)
