# Build (input, target) HTML pairs for the seven conditional layout generation tasks

from dataclasses import dataclass
from enum import Enum
import hashlib
import json
import os
import sys
from typing import Optional

import numpy as np
from tqdm import tqdm

from layout_core import (
    ATTRIBUTES, GEOMETRY_ATTRIBUTES, Canvas, Element, Layout, LayoutDomainError, MaskedElement,
    discretize, draw_permutation, permute_synchronized, permute_texts, round_half_up,
)
from html_codec import format_text_constraint, serialize, serialize_elements
from utils import metadata_path, write_metadata

MAX_RECOVER_RATIO = 0.8
REFINEMENT_SIGMA = 0.01

TASK_DEFINITION_TEMPLATE = ("I want to generate layout in poster design format. "
                            "Please {action} the layout html   according to the {condition} "
                            "I provide (in html format)")


class TaskKind(str, Enum):
    GEN_I = "GenI"
    GEN_IT = "GenIT"
    GEN_ITS = "GenITS"
    GEN_ITP = "GenITP"
    COMPLETION = "Completion"
    RECOVER = "Recover"
    REFINEMENT = "Refinement"


# (action, condition clause) per task kind
TASK_CONDITIONS = {
    TaskKind.GEN_I: ("generate", "image"),
    TaskKind.GEN_IT: ("generate", "categories and image"),
    TaskKind.GEN_ITS: ("generate", "categories, size and image"),
    TaskKind.GEN_ITP: ("generate", "categories, position and image"),
    TaskKind.COMPLETION: ("complete", "partial bbox , categories, size, image"),
    TaskKind.RECOVER: ("recover", "bbox , categories, size, image"),
    TaskKind.REFINEMENT: ("refine", "noisy bbox , categories, size, image"),
}

# attributes masked on every element, for the kinds that mask uniformly
FIXED_MASKS = {
    TaskKind.GEN_IT: GEOMETRY_ATTRIBUTES,
    TaskKind.GEN_ITS: ("x", "y"),
    TaskKind.GEN_ITP: ("w", "h"),
}


def task_definition(kind):
    action, condition = TASK_CONDITIONS[TaskKind(kind)]
    return TASK_DEFINITION_TEMPLATE.format(action=action, condition=condition)


@dataclass(frozen=True)
class TaskParams:
    recover_ratio: Optional[float] = None
    recover_mask_category: bool = False
    mask_slots: Optional[frozenset] = None
    completion_given: Optional[int] = None
    count_hint: bool = False
    permute: bool = True
    refinement_sigma: float = REFINEMENT_SIGMA
    text_constraint: bool = True

    def __post_init__(self):
        if self.recover_ratio is not None and not (0.0 < self.recover_ratio <= MAX_RECOVER_RATIO):
            raise LayoutDomainError(f"recover_ratio must lie in (0, {MAX_RECOVER_RATIO}], got {self.recover_ratio}")
        if self.refinement_sigma < 0:
            raise LayoutDomainError(f"refinement_sigma must be >= 0, got {self.refinement_sigma}")


@dataclass(frozen=True)
class TaskSample:
    kind: TaskKind
    canvas: Canvas
    input_html: str
    target_html: str
    texts: Optional[tuple]
    seed: int
    sample_id: str = ""
    source_id: str = ""
    task_definition: str = ""
    text_constraint: Optional[str] = None

    def to_dict(self):
        return {
            "sample_id": self.sample_id,
            "source_id": self.source_id,
            "kind": self.kind.value,
            "seed": self.seed,
            "canvas": self.canvas.to_dict(),
            "task_definition": self.task_definition,
            "text_constraint": self.text_constraint,
            "texts": list(self.texts) if self.texts is not None else None,
            "input_html": self.input_html,
            "target_html": self.target_html,
        }

    @classmethod
    def from_dict(cls, data):
        texts = data.get("texts")
        return cls(kind=TaskKind(data["kind"]), canvas=Canvas.from_dict(data["canvas"]),
                   input_html=data["input_html"], target_html=data["target_html"],
                   texts=tuple(texts) if texts is not None else None, seed=int(data["seed"]),
                   sample_id=data.get("sample_id", ""), source_id=data.get("source_id", ""),
                   task_definition=data.get("task_definition", ""),
                   text_constraint=data.get("text_constraint"))


def mask_schedule_recover(n_attrs, ratio, seed):
    """
    Sample which attribute slots a Recover input masks.

    The subset size is round(ratio * n_attrs), floored at 1 and capped at
    floor(0.8 * n_attrs) whenever that cap is at least 1.

    Args:
        n_attrs (int): Number of attribute slots
        ratio (float): Masking ratio in (0, 0.8]
        seed (int): RNG seed

    Returns:
        frozenset: Masked slot indices
    """
    if not (0.0 < ratio <= MAX_RECOVER_RATIO):
        raise LayoutDomainError(f"ratio must lie in (0, {MAX_RECOVER_RATIO}], got {ratio}")
    if n_attrs <= 0:
        raise LayoutDomainError(f"n_attrs must be positive, got {n_attrs}")
    size = max(1, round_half_up(ratio * n_attrs))
    cap = (4 * n_attrs) // 5
    if cap >= 1:
        size = min(size, cap)
    rng = np.random.default_rng(seed)
    return frozenset(int(i) for i in rng.choice(n_attrs, size=size, replace=False))


def sample_refinement_noise(n, seed, sigma=REFINEMENT_SIGMA):
    rng = np.random.default_rng(seed)
    return rng.normal(0.0, sigma, size=n)


def perturb_refinement(gt, seed, sigma=REFINEMENT_SIGMA):
    """Jitter every element in normalized coordinates, re-discretize and clamp into the canvas."""
    width, height = gt.canvas.width, gt.canvas.height
    noise = sample_refinement_noise(4 * len(gt.elements), seed, sigma).reshape(-1, 4)
    elements = []
    for element, (dx, dy, dw, dh) in zip(gt.elements, noise):
        x = discretize(float(np.clip(element.x / width + dx, 0.0, 1.0)), width)
        y = discretize(float(np.clip(element.y / height + dy, 0.0, 1.0)), height)
        w = discretize(float(np.clip(element.w / width + dw, 0.0, 1.0)), width)
        h = discretize(float(np.clip(element.h / height + dh, 0.0, 1.0)), height)
        x = min(x, width - w)
        y = min(y, height - h)
        elements.append(Element(element.category, x, y, w, h))
    return Layout(gt.canvas, tuple(elements), gt.texts)


def _seed_int(seed_sequence):
    return int(seed_sequence.generate_state(1)[0])


def _recover_inputs(targets, slots, mask_category):
    attrs = ATTRIBUTES if mask_category else GEOMETRY_ATTRIBUTES
    inputs = []
    for index, element in enumerate(targets):
        masked = [name for offset, name in enumerate(attrs) if index * len(attrs) + offset in slots]
        inputs.append(element.as_masked(masked))
    return inputs


def build(kind, gt, seed, params=None, source_id="sample"):
    """
    Build one task sample from a ground-truth layout.

    Args:
        kind (TaskKind): Task to build
        gt (Layout): Ground-truth layout
        seed (int): Seed for every random choice of this sample
        params (TaskParams): Kind-specific parameters
        source_id (str): Id of the record the layout came from

    Returns:
        TaskSample: Serialized input/target pair with its task definition
    """
    kind = TaskKind(kind)
    params = params or TaskParams()
    n = len(gt.elements)
    mask_ss, perm_ss, noise_ss = np.random.SeedSequence(seed).spawn(3)
    rng = np.random.default_rng(mask_ss)
    targets = list(gt.elements)

    given = None
    if kind == TaskKind.GEN_I:
        inputs = [MaskedElement.placeholder() for _ in targets]
    elif kind in FIXED_MASKS:
        inputs = [e.as_masked(FIXED_MASKS[kind]) for e in targets]
    elif kind == TaskKind.RECOVER:
        if n == 0:
            raise LayoutDomainError("Recover needs at least one element")
        slots_per_element = len(ATTRIBUTES) if params.recover_mask_category else len(GEOMETRY_ATTRIBUTES)
        slots = params.mask_slots
        if slots is None:
            ratio = params.recover_ratio
            if ratio is None:
                ratio = MAX_RECOVER_RATIO * (1.0 - rng.random())
            slots = mask_schedule_recover(n * slots_per_element, ratio, _seed_int(mask_ss.spawn(1)[0]))
        inputs = _recover_inputs(targets, frozenset(slots), params.recover_mask_category)
    elif kind == TaskKind.COMPLETION:
        given = params.completion_given
        if given is None:
            if n < 2:
                raise LayoutDomainError(f"Completion needs at least two elements, got {n}")
            given = int(rng.integers(1, n))
        if not (1 <= given <= n - 1):
            raise LayoutDomainError(f"Completion must give between 1 and {n - 1} elements, got {given}")
        inputs = [e.as_masked(()) for e in targets]
    else:
        noisy = perturb_refinement(gt, _seed_int(noise_ss), params.refinement_sigma)
        inputs = [e.as_masked(()) for e in noisy.elements]

    texts = gt.texts
    if params.permute:
        perm_seed = _seed_int(perm_ss)
        inputs, targets = permute_synchronized(inputs, targets, perm_seed)
        texts = permute_texts(gt.elements, gt.texts, draw_permutation(n, perm_seed))

    if kind == TaskKind.GEN_I and not params.count_hint:
        inputs = []
    if given is not None:
        inputs = inputs[:given]

    target_layout = Layout(gt.canvas, tuple(targets), texts)
    text_constraint = format_text_constraint(texts) if params.text_constraint else None
    return TaskSample(kind=kind, canvas=gt.canvas,
                      input_html=serialize_elements(gt.canvas, inputs),
                      target_html=serialize(target_layout),
                      texts=texts, seed=int(seed),
                      sample_id=f"{source_id}:{kind.value}", source_id=source_id,
                      task_definition=task_definition(kind), text_constraint=text_constraint)


def derive_seed(base_seed, record_id, kind):
    digest = hashlib.blake2b(f"{base_seed}:{record_id}:{TaskKind(kind).value}".encode("utf-8"),
                             digest_size=4).digest()
    return int.from_bytes(digest, "big")


def build_tasks(records, kinds, base_seed=42, params=None):
    """
    Expand SampleRecords into TaskSamples, one per (record, kind).

    Returns:
        tuple: (list of TaskSample, dict of skipped counts per kind)
    """
    samples = []
    skipped = {}
    for record in records:
        layout = record.layout()
        for kind in kinds:
            kind = TaskKind(kind)
            try:
                samples.append(build(kind, layout, derive_seed(base_seed, record.id, kind), params, record.id))
            except LayoutDomainError as e:
                skipped[kind.value] = skipped.get(kind.value, 0) + 1
                print(f"⚠️  Skipping {record.id} for {kind.value}: {e}")
    return samples, skipped


def write_task_samples(samples, path):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        for sample in samples:
            f.write(json.dumps(sample.to_dict(), ensure_ascii=False) + "\n")
    return path


def read_task_samples(path):
    samples = []
    with open(path, 'r', encoding='utf-8') as f:
        for line in f:
            if line.strip():
                samples.append(TaskSample.from_dict(json.loads(line)))
    return samples


def main():
    import argparse
    from dataset_io import read_records

    parser = argparse.ArgumentParser(description='Build conditional layout generation task samples')
    parser.add_argument('--records', required=True, help='SampleRecord JSONL file')
    parser.add_argument('--kinds', nargs='+', default=[k.value for k in TaskKind],
                        choices=[k.value for k in TaskKind], help='Task kinds to build')
    parser.add_argument('--seed', type=int, default=42, help='Base seed (default: 42)')
    parser.add_argument('--split', default=None, choices=['train', 'val', 'test'],
                        help='Only use records of this split')
    parser.add_argument('--recover-mask-category', action='store_true',
                        help='Allow Recover to mask the category slot')
    parser.add_argument('--count-hint', action='store_true',
                        help='Give GenI inputs one fully masked rect per element')
    parser.add_argument('--out', required=True, help='Output TaskSample JSONL file')
    args = parser.parse_args()

    try:
        records = read_records(args.records)
        if args.split:
            records = [r for r in records if r.split == args.split]
        params = TaskParams(recover_mask_category=args.recover_mask_category, count_hint=args.count_hint)
        print(f"🚀 Building {len(args.kinds)} task kind(s) for {len(records)} record(s)")
        samples, skipped = build_tasks(tqdm(records, desc="Building tasks"), args.kinds, args.seed, params)
        write_task_samples(samples, args.out)
        write_metadata(metadata_path(args.out), "Task Build Metadata", {
            "Records": args.records,
            "Split": args.split or "all",
            "Kinds": ", ".join(args.kinds),
            "Base seed": args.seed,
            "Samples written": len(samples),
            "Skipped": skipped or "none",
        })
        print(f"✅ Wrote {len(samples)} task samples to {args.out}")
        return 0
    except Exception as e:
        print(f"❌ Task build failed: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
