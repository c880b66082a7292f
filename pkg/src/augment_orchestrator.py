"""
Depth-guided poster augmentation.

For each source poster: caption it, estimate a depth map, request N
depth-conditioned generations from the caption prompt, score each candidate
against the original image and keep the top-k as new records that reuse the
source layout. The four models are external HTTP endpoints.
"""

import base64
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field, replace
import json
import math
import os
import sys
from typing import Optional, Protocol
import tomllib

import cv2
import numpy as np
from tqdm import tqdm

from dataset_io import read_records, resolve_asset, write_records
from layout_core import LayoutDomainError
from utils import TransportError, auth_headers, call_with_retries, metadata_path, post_json, write_metadata

DEFAULT_N_CANDIDATES = 10
DEFAULT_K_SELECTED = 3
DEFAULT_CAPTION_TEMPLATE = "Please generate {Caption} in advertisement poster."
ENDPOINT_NAMES = ("captioner", "depth_estimator", "image_generator", "similarity_scorer")
AUG_DIR = "aug"
JOB_MANIFEST = "job.json"


class AugmentJobError(RuntimeError):
    """An augmentation job could not complete; it emits no records."""


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str
    route: str = ""
    api_key_env: Optional[str] = None
    timeout: float = 120.0
    max_retries: int = 2
    params: dict = field(default_factory=dict)

    @property
    def url(self):
        if not self.route:
            return self.base_url
        return self.base_url.rstrip("/") + "/" + self.route.lstrip("/")


@dataclass(frozen=True)
class AugmentConfig:
    endpoints: dict
    n_candidates: int = DEFAULT_N_CANDIDATES
    k_selected: int = DEFAULT_K_SELECTED
    caption_template: str = DEFAULT_CAPTION_TEMPLATE
    parallelism: int = 2
    candidate_parallelism: int = 4
    retry_backoff: float = 1.0

    def __post_init__(self):
        if not (1 <= self.k_selected <= self.n_candidates):
            raise LayoutDomainError(
                f"Need 1 <= k_selected <= n_candidates, got k={self.k_selected}, n={self.n_candidates}")
        if "{Caption}" not in self.caption_template:
            raise LayoutDomainError("caption_template must contain {Caption}")
        missing = [name for name in ENDPOINT_NAMES if name not in self.endpoints]
        if missing:
            raise LayoutDomainError(f"Missing endpoint config(s): {missing}")

    def prompt_for(self, caption):
        return self.caption_template.replace("{Caption}", caption.strip())


def load_augment_config(path):
    """Read augment.toml: top-level settings plus one [endpoints.<name>] table per model."""
    with open(path, 'rb') as f:
        data = tomllib.load(f)
    endpoints = {name: EndpointConfig(**table) for name, table in data.pop("endpoints", {}).items()}
    return AugmentConfig(endpoints=endpoints, **data)


@dataclass
class AugmentJob:
    source_id: str
    caption: str = ""
    prompt: str = ""
    depth_ref: str = ""
    candidates: list = field(default_factory=list)  # [image ref, score]
    selected: list = field(default_factory=list)
    status: str = "pending"
    error: str = ""

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


class AugmentServices(Protocol):
    def caption(self, image: bytes) -> str: ...
    def depth(self, image: bytes) -> bytes: ...
    def generate(self, prompt: str, depth: bytes, index: int) -> bytes: ...
    def similarity(self, original: bytes, candidate: bytes) -> float: ...


def _b64(data):
    return base64.b64encode(data).decode("ascii")


class HttpAugmentServices:
    """
    JSON endpoint contracts:
      captioner        {image}                 -> {caption}
      depth_estimator  {image}                 -> {depth}
      image_generator  {prompt, depth, seed,...} -> {image}
      similarity_scorer {image_a, image_b}     -> {score} (higher = closer) or {distance}
    Images travel as base64-encoded PNG/JPEG bytes.
    """

    def __init__(self, config):
        self.config = config

    def _call(self, name, payload):
        endpoint = self.config.endpoints[name]
        headers = auth_headers(endpoint.api_key_env)
        result, _ = call_with_retries(lambda: post_json(endpoint.url, payload, headers, endpoint.timeout),
                                      endpoint.max_retries, self.config.retry_backoff)
        return result

    def _field(self, name, data, key):
        if not isinstance(data, dict) or key not in data:
            raise TransportError(f"{name} response has no {key!r} field", retryable=False)
        return data[key]

    def caption(self, image):
        return str(self._field("captioner", self._call("captioner", {"image": _b64(image)}), "caption"))

    def depth(self, image):
        data = self._call("depth_estimator", {"image": _b64(image)})
        return base64.b64decode(self._field("depth_estimator", data, "depth"))

    def generate(self, prompt, depth, index):
        payload = {"prompt": prompt, "depth": _b64(depth), "seed": index,
                   **self.config.endpoints["image_generator"].params}
        data = self._call("image_generator", payload)
        return base64.b64decode(self._field("image_generator", data, "image"))

    def similarity(self, original, candidate):
        data = self._call("similarity_scorer", {"image_a": _b64(original), "image_b": _b64(candidate)})
        try:
            if isinstance(data, dict) and "score" in data:
                return float(data["score"])
            return -float(self._field("similarity_scorer", data, "distance"))
        except (TypeError, ValueError) as e:
            raise TransportError(f"similarity_scorer returned a non-numeric value: {e}", retryable=False) from e


def select_top_k(scores, k):
    """
    Indices of the k largest scores, best first, ties broken by lower index.

    Args:
        scores (list): Candidate scores
        k (int): Number to keep

    Returns:
        list: Selected indices
    """
    if k < 0 or k > len(scores):
        raise LayoutDomainError(f"Cannot select {k} of {len(scores)} scores")
    if any(math.isnan(s) for s in scores):
        raise LayoutDomainError("Scores contain NaN")
    return sorted(range(len(scores)), key=lambda i: (-scores[i], i))[:k]


def _job_dir(assets_root, source_id):
    return os.path.join(assets_root, AUG_DIR, source_id)


def _ref(source_id, name):
    return f"{AUG_DIR}/{source_id}/{name}"


def _store_image(data, path, canvas=None):
    """Decode, resize to the canvas when given, and write as PNG."""
    if not data:
        raise AugmentJobError(f"Endpoint returned empty image data for {path}")
    try:
        image = cv2.imdecode(np.frombuffer(data, dtype=np.uint8), cv2.IMREAD_UNCHANGED)
    except cv2.error as e:
        raise AugmentJobError(f"Endpoint returned undecodable image data for {path}: {e}") from e
    if image is None:
        raise AugmentJobError(f"Endpoint returned undecodable image data for {path}")
    if canvas is not None and image.shape[:2] != canvas.shape:
        image = cv2.resize(image, (canvas.width, canvas.height), interpolation=cv2.INTER_AREA)
    if not cv2.imwrite(path, image):
        raise AugmentJobError(f"Could not write {path}")
    return path


def augmented_records(source, job):
    """Records for the selected candidates; elements copied from the source unchanged."""
    records = []
    for ref in job.selected:
        index = int(os.path.splitext(os.path.basename(ref))[0])
        records.append(replace(source, id=f"{source.id}-aug{index:02d}",
                               canvas=replace(source.canvas, image_ref=ref, saliency_ref=None),
                               provenance="augmented", parent_id=source.id))
    return records


def load_completed_job(assets_root, source_id):
    manifest = os.path.join(_job_dir(assets_root, source_id), JOB_MANIFEST)
    if not os.path.isfile(manifest):
        return None
    with open(manifest, 'r', encoding='utf-8') as f:
        job = AugmentJob.from_dict(json.load(f))
    return job if job.status == "complete" else None


def run_job(source, cfg, services, assets_root):
    """
    Run one augmentation job.

    Args:
        source (SampleRecord): Original record; its canvas image must resolve under assets_root
        cfg (AugmentConfig): Counts, template and endpoint settings
        services (AugmentServices): Endpoint clients
        assets_root (str): Root for source images and the aug/ output tree

    Returns:
        tuple: (AugmentJob, list of new SampleRecords, or [] when the job was already complete)
    """
    done = load_completed_job(assets_root, source.id)
    if done is not None:
        return done, []
    if source.provenance != "original":
        raise AugmentJobError(f"{source.id} is not an original record")

    image_path = resolve_asset(assets_root, source.canvas.image_ref)
    if image_path is None:
        raise AugmentJobError(f"Source image for {source.id} not found: {source.canvas.image_ref}")
    job = AugmentJob(source_id=source.id)
    job_dir = _job_dir(assets_root, source.id)
    try:
        with open(image_path, 'rb') as f:
            original = f.read()
        os.makedirs(job_dir, exist_ok=True)
        job.caption = services.caption(original)
        job.prompt = cfg.prompt_for(job.caption)
        depth = services.depth(original)
        _store_image(depth, os.path.join(job_dir, "depth.png"))
        job.depth_ref = _ref(source.id, "depth.png")

        def make_candidate(index):
            data = services.generate(job.prompt, depth, index)
            _store_image(data, os.path.join(job_dir, f"{index}.png"), source.canvas)
            with open(os.path.join(job_dir, f"{index}.png"), 'rb') as f:
                stored = f.read()
            return index, services.similarity(original, stored)

        scores = [0.0] * cfg.n_candidates
        with ThreadPoolExecutor(max_workers=max(1, cfg.candidate_parallelism)) as executor:
            for future in as_completed([executor.submit(make_candidate, i) for i in range(cfg.n_candidates)]):
                index, score = future.result()
                scores[index] = float(score)

        job.candidates = [[_ref(source.id, f"{i}.png"), scores[i]] for i in range(cfg.n_candidates)]
        job.selected = [_ref(source.id, f"{i}.png") for i in select_top_k(scores, cfg.k_selected)]
        job.status = "complete"
        with open(os.path.join(job_dir, JOB_MANIFEST), 'w', encoding='utf-8') as f:
            json.dump(job.to_dict(), f, indent=2)
    except (TransportError, AugmentJobError, ValueError, TypeError, OSError, cv2.error) as e:
        raise AugmentJobError(f"Augmentation of {source.id} failed: {e}") from e
    return job, augmented_records(source, job)


def augment_records(records, cfg, services, assets_root, known_ids=(), progress=True):
    """
    Run jobs for every original record with bounded concurrency.

    Jobs that were already complete re-emit only records whose ids are not in known_ids.

    Returns:
        dict: {'records': new records in input order, 'jobs', 'failed', 'skipped', 'errors'}
    """
    sources = [r for r in records if r.provenance == "original"]
    outcomes = {}

    def run(source):
        try:
            job, new = run_job(source, cfg, services, assets_root)
            if not new:
                new = [r for r in augmented_records(source, job) if r.id not in known_ids]
                return {'success': True, 'job': job, 'records': new, 'resumed': True, 'message': source.id}
            return {'success': True, 'job': job, 'records': new, 'resumed': False,
                    'message': f"{source.id}: {len(new)} record(s)"}
        except AugmentJobError as e:
            return {'success': False, 'job': None, 'records': [], 'message': str(e)}
        except Exception as e:  # failures stay per job
            return {'success': False, 'job': None, 'records': [], 'message': f"{source.id}: {type(e).__name__}: {e}"}

    with ThreadPoolExecutor(max_workers=max(1, cfg.parallelism)) as executor:
        futures = {executor.submit(run, s): s.id for s in sources}
        for future in tqdm(as_completed(futures), total=len(futures), desc="Augmenting", disable=not progress):
            outcomes[futures[future]] = future.result()

    results = {'records': [], 'jobs': [], 'completed': 0, 'skipped': 0, 'failed': 0, 'errors': []}
    for source in sources:
        outcome = outcomes[source.id]
        if outcome['success']:
            results['jobs'].append(outcome['job'])
            results['records'].extend(outcome['records'])
            if outcome['resumed']:
                results['skipped'] += 1
            else:
                results['completed'] += 1
        else:
            results['failed'] += 1
            results['errors'].append(outcome['message'])
            print(f"❌ {outcome['message']}")
    return results


def main():
    import argparse

    parser = argparse.ArgumentParser(description='Depth-guided poster augmentation through external endpoints')
    parser.add_argument('--in', dest='input', required=True, help='Source SampleRecord JSONL')
    parser.add_argument('--cfg', required=True, help='augment.toml')
    parser.add_argument('--assets', default=None,
                        help='Root for source images; aug/ is written here (default: directory of --in)')
    parser.add_argument('--out', required=True, help='Output JSONL of augmented records')
    parser.add_argument('--split', default='train', choices=['train', 'val', 'test', 'all'],
                        help='Only augment records of this split (default: train)')
    args = parser.parse_args()
    assets = args.assets or os.path.dirname(os.path.abspath(args.input))

    try:
        cfg = load_augment_config(args.cfg)
        records = read_records(args.input)
    except Exception as e:
        print(f"❌ Could not load inputs: {e}")
        return 1
    if args.split != 'all':
        records = [r for r in records if r.split == args.split]

    existing = read_records(args.out) if os.path.isfile(args.out) else []
    print(f"🚀 Augmenting {len(records)} record(s): N={cfg.n_candidates}, k={cfg.k_selected}")
    known = {r.id for r in existing}
    results = augment_records(records, cfg, HttpAugmentServices(cfg), assets, known_ids=known)
    merged = existing + [r for r in results['records'] if r.id not in known]
    write_records(merged, args.out)
    write_metadata(metadata_path(args.out), "Augmentation Metadata", {
        "Input": args.input,
        "Config": args.cfg,
        "Assets": assets,
        "Candidates per job": cfg.n_candidates,
        "Selected per job": cfg.k_selected,
        "Caption template": cfg.caption_template,
        "Jobs completed": results['completed'],
        "Jobs already complete": results['skipped'],
        "Jobs failed": results['failed'],
        "Records written": len(merged),
    })
    print(f"✅ Completed: {results['completed']}")
    print(f"⏭️  Already complete: {results['skipped']}")
    print(f"❌ Failed: {results['failed']}")
    return 0 if results['failed'] == 0 else 1


if __name__ == "__main__":
    sys.exit(main())
