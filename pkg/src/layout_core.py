# Layout domain model: categories, canvases, elements, discretization and validity

from dataclasses import dataclass, replace
from enum import Enum
import math
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np


class LayoutDomainError(ValueError):
    """Raised when a layout value or operation argument violates the domain rules."""


class Category(str, Enum):
    LOGO = "Logo"
    TEXT = "Text"
    UNDERLAY = "Underlay"
    EMBELLISHMENT = "Embellishment"

    @classmethod
    def from_name(cls, name):
        try:
            return cls(name)
        except ValueError:
            raise LayoutDomainError(f"Unknown category: {name!r}") from None


# Fixed category order used for one-hot features and sort keys
CATEGORY_ORDER = (Category.LOGO, Category.TEXT, Category.UNDERLAY, Category.EMBELLISHMENT)

DATASET_PROFILES = {
    "pku": frozenset({Category.LOGO, Category.TEXT, Category.UNDERLAY}),
    "cgl": frozenset(CATEGORY_ORDER),
}

ATTRIBUTES = ("category", "x", "y", "w", "h")
GEOMETRY_ATTRIBUTES = ("x", "y", "w", "h")


def profile_categories(profile):
    """Return the allowed category set for a dataset profile name ("pku" or "cgl")."""
    key = str(profile).lower()
    if key not in DATASET_PROFILES:
        raise LayoutDomainError(f"Unknown dataset profile: {profile!r} (expected one of {sorted(DATASET_PROFILES)})")
    return DATASET_PROFILES[key]


class _MaskToken(Enum):
    TOKEN = "<M>"

    def __repr__(self):
        return "MASK"


MASK = _MaskToken.TOKEN
MASK_TEXT = MASK.value


def round_half_up(value):
    return int(math.floor(value + 0.5))


def discretize(x_cont, axis_extent):
    """
    Map a normalized coordinate onto the integer pixel grid of one canvas axis.

    Args:
        x_cont (float): Coordinate in [0, 1]
        axis_extent (int): Canvas extent along the axis, in pixels

    Returns:
        int: round(x_cont * axis_extent), clamped to [0, axis_extent]
    """
    if not isinstance(axis_extent, (int, np.integer)) or axis_extent <= 0:
        raise LayoutDomainError(f"axis_extent must be a positive integer, got {axis_extent!r}")
    if not (0.0 <= x_cont <= 1.0):
        raise LayoutDomainError(f"x_cont must lie in [0, 1], got {x_cont!r}")
    return min(max(round_half_up(x_cont * axis_extent), 0), int(axis_extent))


def normalize(value, axis_extent):
    if axis_extent <= 0:
        raise LayoutDomainError(f"axis_extent must be positive, got {axis_extent!r}")
    return value / axis_extent


class Box(NamedTuple):
    x: int
    y: int
    w: int
    h: int

    @property
    def x2(self):
        return self.x + self.w

    @property
    def y2(self):
        return self.y + self.h

    @property
    def area(self):
        return self.w * self.h

    def intersection_area(self, other):
        iw = min(self.x2, other.x2) - max(self.x, other.x)
        ih = min(self.y2, other.y2) - max(self.y, other.y)
        if iw <= 0 or ih <= 0:
            return 0
        return iw * ih

    def iou(self, other):
        inter = self.intersection_area(other)
        union = self.area + other.area - inter
        return inter / union if union > 0 else 0.0

    def contains(self, other):
        return (self.x <= other.x and self.y <= other.y
                and other.x2 <= self.x2 and other.y2 <= self.y2)


def _check_pixel(name, value):
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        raise LayoutDomainError(f"{name} must be an integer, got {value!r}")
    if value < 0:
        raise LayoutDomainError(f"{name} must be >= 0, got {value}")


@dataclass(frozen=True)
class Canvas:
    width: int
    height: int
    image_ref: str = ""
    saliency_ref: Optional[str] = None

    def __post_init__(self):
        for name in ("width", "height"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value <= 0:
                raise LayoutDomainError(f"Canvas {name} must be a positive integer, got {value!r}")
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))

    @property
    def area(self):
        return self.width * self.height

    @property
    def shape(self):
        """(rows, cols) shape of images drawn on this canvas."""
        return (self.height, self.width)

    def to_dict(self):
        return {"width": self.width, "height": self.height,
                "image": self.image_ref, "saliency": self.saliency_ref}

    @classmethod
    def from_dict(cls, data):
        return cls(int(data["width"]), int(data["height"]),
                   data.get("image") or "", data.get("saliency"))


@dataclass(frozen=True)
class Element:
    category: Category
    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if not isinstance(self.category, Category):
            object.__setattr__(self, "category", Category.from_name(self.category))
        for name in GEOMETRY_ATTRIBUTES:
            _check_pixel(name, getattr(self, name))
            object.__setattr__(self, name, int(getattr(self, name)))

    @property
    def box(self):
        return Box(self.x, self.y, self.w, self.h)

    @property
    def area(self):
        return self.w * self.h

    def fits(self, canvas):
        return self.x + self.w <= canvas.width and self.y + self.h <= canvas.height

    def as_masked(self, masked_attrs=()):
        values = {name: (MASK if name in masked_attrs else getattr(self, name)) for name in ATTRIBUTES}
        return MaskedElement(**values)

    def to_dict(self):
        return {"category": self.category.value, "x": self.x, "y": self.y, "w": self.w, "h": self.h}

    @classmethod
    def from_dict(cls, data):
        return cls(Category.from_name(data["category"]), data["x"], data["y"], data["w"], data["h"])


MaskableInt = Union[int, _MaskToken]


@dataclass(frozen=True)
class MaskedElement:
    """An element whose attributes may each be replaced by the mask token."""
    category: Union[Category, _MaskToken]
    x: MaskableInt
    y: MaskableInt
    w: MaskableInt
    h: MaskableInt

    def __post_init__(self):
        if self.category is not MASK and not isinstance(self.category, Category):
            object.__setattr__(self, "category", Category.from_name(self.category))
        for name in GEOMETRY_ATTRIBUTES:
            value = getattr(self, name)
            if value is not MASK:
                _check_pixel(name, value)
                object.__setattr__(self, name, int(value))

    @classmethod
    def placeholder(cls):
        return cls(MASK, MASK, MASK, MASK, MASK)

    @property
    def masked_attributes(self):
        return frozenset(name for name in ATTRIBUTES if getattr(self, name) is MASK)

    @property
    def is_placeholder(self):
        return len(self.masked_attributes) == len(ATTRIBUTES)

    @property
    def is_concrete(self):
        return not self.masked_attributes

    def to_element(self):
        if not self.is_concrete:
            raise LayoutDomainError(f"Element still has masked attributes: {sorted(self.masked_attributes)}")
        return Element(self.category, self.x, self.y, self.w, self.h)


@dataclass(frozen=True)
class Layout:
    canvas: Canvas
    elements: tuple = ()
    texts: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "elements", tuple(self.elements))
        for index, element in enumerate(self.elements):
            if not isinstance(element, Element):
                raise LayoutDomainError(f"Layout element {index} is not an Element: {element!r}")
            if not element.fits(self.canvas):
                raise LayoutDomainError(
                    f"Element {index} {element.box} overflows canvas {self.canvas.width}x{self.canvas.height}")
        if self.texts is not None:
            object.__setattr__(self, "texts", tuple(str(t) for t in self.texts))
            n_text = self.count(Category.TEXT)
            if len(self.texts) != n_text:
                raise LayoutDomainError(
                    f"Layout has {len(self.texts)} texts but {n_text} Text elements")

    def __len__(self):
        return len(self.elements)

    def count(self, category):
        return sum(1 for e in self.elements if e.category == category)

    def valid_elements(self):
        return [e for e in self.elements if is_valid(e, self.canvas)]

    def with_elements(self, elements, texts=None):
        return replace(self, elements=tuple(elements), texts=texts)


def is_valid(e, c):
    """True iff the element covers strictly more than 0.1% of the canvas area."""
    # integer form of (w*h)/(W*H) > 0.001
    return 1000 * e.w * e.h > c.width * c.height


def draw_permutation(n, seed):
    rng = np.random.default_rng(seed)
    return [int(i) for i in rng.permutation(n)]


def permute_synchronized(input_elems, target_elems, seed):
    """
    Reorder two aligned element lists by one seeded uniform permutation.

    Args:
        input_elems (list): Input-side elements (usually MaskedElement)
        target_elems (list): Target-side elements, same length
        seed (int): Permutation seed

    Returns:
        tuple: (permuted input list, permuted target list)
    """
    if len(input_elems) != len(target_elems):
        raise LayoutDomainError(
            f"Cannot permute lists of different length ({len(input_elems)} vs {len(target_elems)})")
    order = draw_permutation(len(target_elems), seed)
    return [input_elems[i] for i in order], [target_elems[i] for i in order]


def permute_texts(elements, texts, order):
    """Reorder texts to follow the Text elements of ``elements`` after ``order`` was applied."""
    if texts is None:
        return None
    text_slots = [i for i, e in enumerate(elements) if e.category == Category.TEXT]
    slot_to_text = dict(zip(text_slots, texts))
    return tuple(slot_to_text[i] for i in order if i in slot_to_text)


def elements_equal(a: Sequence[Element], b: Sequence[Element]):
    return len(a) == len(b) and all(x == y for x, y in zip(a, b))
