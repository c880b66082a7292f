# Generation harness: drive a completion backend over task samples, parse, and evaluate
# Works with any HTTP JSON completion endpoint; parse failures are terminal, transport errors are retried

from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
import hashlib
import json
import os
import sys
import time
from typing import Optional, Protocol
import warnings

from tqdm import tqdm

from layout_core import Canvas, Element, Layout, LayoutDomainError
from html_codec import FailureKind, PromptParts, assemble_prompt, parse
from metrics import DEFAULT_MAX_ELEMS, compute_report, leakage_probe, write_report
from dataset_io import load_grayscale, read_records, resolve_asset
from task_builder import read_task_samples
from utils import TransportError, auth_headers, call_with_retries, metadata_path, post_json, write_metadata

DEFAULT_TOP_P = 0.9
DEFAULT_TEMPERATURE = 0.7
DEFAULT_MAX_TOKENS = 1024
DEFAULT_MAX_RETRIES = 2
DEFAULT_TIMEOUT = 60.0
DEFAULT_PARALLELISM = 4

ECHO_SCHEME = "echo://"
STATUS_OK = "ok"
STATUS_TRANSPORT = "Transport"


@dataclass(frozen=True)
class SamplingConfig:
    top_p: float = DEFAULT_TOP_P
    temperature: float = DEFAULT_TEMPERATURE
    max_retries: int = DEFAULT_MAX_RETRIES
    timeout: float = DEFAULT_TIMEOUT
    max_tokens: int = DEFAULT_MAX_TOKENS
    retry_backoff: float = 0.5

    def __post_init__(self):
        if not (0.0 < self.top_p <= 1.0):
            raise ValueError(f"top_p must lie in (0, 1], got {self.top_p}")
        if self.temperature < 0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")
        if self.max_retries < 0:
            raise ValueError(f"max_retries must be >= 0, got {self.max_retries}")
        if self.timeout <= 0:
            raise ValueError(f"timeout must be positive, got {self.timeout}")
        if self.max_tokens <= 0:
            raise ValueError(f"max_tokens must be positive, got {self.max_tokens}")


@dataclass(frozen=True)
class BackendConfig:
    url: str
    model: str = ""
    api_key_env: Optional[str] = None
    attach_image: bool = False


class CompletionBackend(Protocol):
    def complete(self, prompt: str, sample, sampling: SamplingConfig) -> str:
        ...


class HttpCompletionBackend:
    """POSTs {model, prompt, top_p, temperature, max_tokens} and reads the completion text."""

    def __init__(self, config):
        self.config = config

    def complete(self, prompt, sample, sampling):
        payload = {
            "model": self.config.model,
            "prompt": prompt,
            "top_p": sampling.top_p,
            "temperature": sampling.temperature,
            "max_tokens": sampling.max_tokens,
        }
        if self.config.attach_image and sample.canvas.image_ref:
            payload["image"] = sample.canvas.image_ref
        data = post_json(self.config.url, payload, headers=auth_headers(self.config.api_key_env),
                         timeout=sampling.timeout)
        return extract_completion_text(data)


class EchoBackend:
    """Returns each sample's target serialization; used for dry runs and tests."""

    def complete(self, prompt, sample, sampling):
        return sample.target_html


def extract_completion_text(data):
    if isinstance(data, dict):
        if isinstance(data.get("text"), str):
            return data["text"]
        choices = data.get("choices")
        if isinstance(choices, list) and choices:
            choice = choices[0]
            if isinstance(choice, dict):
                if isinstance(choice.get("text"), str):
                    return choice["text"]
                message = choice.get("message")
                if isinstance(message, dict) and isinstance(message.get("content"), str):
                    return message["content"]
    raise TransportError("response carries no completion text", retryable=False)


def backend_from_config(config):
    if config.url.startswith(ECHO_SCHEME):
        return EchoBackend()
    return HttpCompletionBackend(config)


def build_prompt(sample):
    return assemble_prompt(PromptParts(task_definition=sample.task_definition, html_body=sample.input_html,
                                       text_constraint=sample.text_constraint))


@dataclass
class LedgerEntry:
    sample_id: str
    source_id: str
    kind: str
    request_id: str
    status: str
    raw_output: Optional[str]
    elements: Optional[list]
    canvas: dict
    retries: int = 0
    latency_s: Optional[float] = None
    error: str = ""

    @property
    def ok(self):
        return self.status == STATUS_OK

    def layout(self, canvas=None):
        if not self.ok:
            raise LayoutDomainError(f"Ledger entry {self.sample_id} has no parsed layout ({self.status})")
        canvas = canvas or Canvas.from_dict(self.canvas)
        return Layout(canvas, tuple(Element.from_dict(e) for e in self.elements))

    def to_dict(self, include_timing=True):
        data = {
            "sample_id": self.sample_id,
            "source_id": self.source_id,
            "kind": self.kind,
            "request_id": self.request_id,
            "status": self.status,
            "retries": self.retries,
            "error": self.error,
            "canvas": self.canvas,
            "elements": self.elements,
            "raw_output": self.raw_output,
        }
        if include_timing:
            data["latency_s"] = self.latency_s
        return data

    @classmethod
    def from_dict(cls, data):
        return cls(**{key: data.get(key) for key in ("sample_id", "source_id", "kind", "request_id", "status",
                                                     "raw_output", "elements", "canvas")},
                   retries=data.get("retries", 0), latency_s=data.get("latency_s"), error=data.get("error", ""))


class RunLedger:
    """One terminal entry per dispatched sample, in dispatch order."""

    def __init__(self, entries):
        self.entries = list(entries)
        ids = [e.sample_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError("RunLedger has duplicate sample ids")

    def __len__(self):
        return len(self.entries)

    @property
    def n_success(self):
        return sum(1 for e in self.entries if e.ok)

    @property
    def n_failures(self):
        return len(self.entries) - self.n_success

    @property
    def failure_counts(self):
        counts = {FailureKind.ABNORMAL_FORMAT.value: 0, FailureKind.OVERFLOW.value: 0, STATUS_TRANSPORT: 0}
        for entry in self.entries:
            if not entry.ok:
                counts[entry.status] = counts.get(entry.status, 0) + 1
        return counts

    def write(self, path, include_timing=True):
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            for entry in self.entries:
                f.write(json.dumps(entry.to_dict(include_timing), ensure_ascii=False) + "\n")
        return path

    @classmethod
    def read(cls, path):
        with open(path, 'r', encoding='utf-8') as f:
            return cls(LedgerEntry.from_dict(json.loads(line)) for line in f if line.strip())


def request_id_for(sample_id, prompt):
    return hashlib.blake2b(f"{sample_id}\n{prompt}".encode("utf-8"), digest_size=8).hexdigest()


def dispatch_sample(sample, backend, sampling, profile="cgl"):
    """
    Send one sample's prompt and classify the completion.

    Returns:
        LedgerEntry: Terminal entry for the sample
    """
    prompt = build_prompt(sample)
    entry = LedgerEntry(sample_id=sample.sample_id, source_id=sample.source_id, kind=sample.kind.value,
                        request_id=request_id_for(sample.sample_id, prompt), status=STATUS_TRANSPORT,
                        raw_output=None, elements=None, canvas=sample.canvas.to_dict())
    start = time.perf_counter()
    try:
        raw, entry.retries = call_with_retries(lambda: backend.complete(prompt, sample, sampling),
                                               sampling.max_retries, sampling.retry_backoff)
    except TransportError as e:
        entry.retries = getattr(e, "retries", 0)
        entry.error = str(e)
        entry.latency_s = time.perf_counter() - start
        return entry
    except Exception as e:  # terminal for this sample
        entry.error = f"{type(e).__name__}: {e}"
        entry.latency_s = time.perf_counter() - start
        return entry
    entry.latency_s = time.perf_counter() - start
    entry.raw_output = raw
    outcome = parse(raw, sample.canvas, profile)
    if outcome.ok:
        entry.status = STATUS_OK
        entry.elements = [e.to_dict() for e in outcome.layout.elements]
    else:
        entry.status = outcome.failure_kind.value
        entry.error = outcome.message
    return entry


def generate(samples, backend, sampling=None, parallelism=DEFAULT_PARALLELISM, profile="cgl", progress=True):
    """
    Dispatch every sample with at most `parallelism` requests in flight.

    Args:
        samples (iterable): TaskSamples
        backend (CompletionBackend): Completion backend
        sampling (SamplingConfig): Sampling and retry settings
        parallelism (int): Maximum concurrent requests
        profile (str): Category profile used when parsing completions
        progress (bool): Show a progress bar

    Returns:
        RunLedger: Sealed ledger in input order
    """
    sampling = sampling or SamplingConfig()
    samples = list(samples)
    ids = [s.sample_id for s in samples]
    if len(set(ids)) != len(ids):
        raise ValueError("Task samples must have unique sample ids")
    if parallelism < 1:
        raise ValueError(f"parallelism must be >= 1, got {parallelism}")

    results = {}
    bar = tqdm(total=len(samples), desc="Generating", disable=not progress)
    if parallelism == 1:
        for sample in samples:
            results[sample.sample_id] = dispatch_sample(sample, backend, sampling, profile)
            bar.update(1)
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as executor:
            futures = {executor.submit(dispatch_sample, s, backend, sampling, profile): s.sample_id
                       for s in samples}
            for future in as_completed(futures):
                results[futures[future]] = future.result()
                bar.update(1)
    bar.close()
    return RunLedger(results[sample_id] for sample_id in ids)


def _load_asset(cache, assets_root, ref, canvas):
    path = resolve_asset(assets_root, ref) if assets_root else None
    if path is None:
        return None
    key = (path, canvas.width, canvas.height)
    if key not in cache:
        cache[key] = load_grayscale(path, (canvas.width, canvas.height))
    return cache[key]


def evaluate(ledger, ground_truth, assets_root=None, max_elems=DEFAULT_MAX_ELEMS, inpainted_regions=None):
    """
    Compute the metric report for a sealed ledger.

    Args:
        ledger (RunLedger): Generation ledger
        ground_truth (iterable): SampleRecords, aligned with ledger entries by source id
        assets_root (str): Root that canvas image and saliency refs resolve against
        max_elems (int): Featurizer capacity for FD
        inpainted_regions (dict): Optional source id -> list of (x, y, w, h) for the leakage probe

    Returns:
        MetricReport
    """
    records = {r.id: r for r in ground_truth}
    layouts, references, saliency_maps, canvas_images, regions = [], [], [], [], []
    cache = {}
    missing_assets = 0
    for entry in ledger.entries:
        record = records.get(entry.source_id)
        if record is None:
            raise LayoutDomainError(f"No ground truth for ledger entry {entry.sample_id} (source {entry.source_id})")
        references.append(record.layout())
        if not entry.ok:
            continue
        layouts.append(entry.layout(record.canvas))
        saliency = _load_asset(cache, assets_root, record.canvas.saliency_ref, record.canvas)
        image = _load_asset(cache, assets_root, record.canvas.image_ref, record.canvas)
        if assets_root:
            missing_assets += int(saliency is None) + int(image is None)
        saliency_maps.append(saliency)
        canvas_images.append(image)
        if inpainted_regions is not None:
            regions.append(inpainted_regions.get(entry.source_id, []))

    if missing_assets:
        message = f"{missing_assets} saliency/canvas asset(s) missing; rea/occ computed over available images only"
        warnings.warn(message)
        print(f"⚠️  {message}")

    leakage = leakage_probe(layouts, regions) if inpainted_regions is not None else None
    return compute_report(layouts, n_samples=len(ledger), n_failures=ledger.n_failures,
                          reference_layouts=references,
                          saliency_maps=saliency_maps if any(s is not None for s in saliency_maps) else None,
                          canvas_images=canvas_images if any(i is not None for i in canvas_images) else None,
                          max_elems=max_elems, leakage=leakage)


def print_ledger_summary(ledger):
    print(f"\n{'=' * 50}")
    print("GENERATION SUMMARY")
    print('=' * 50)
    print(f"✅ Parsed: {ledger.n_success}")
    for kind, count in ledger.failure_counts.items():
        print(f"❌ {kind}: {count}")
    print(f"📊 Total: {len(ledger)}")


def generate_main(argv=None):
    import argparse

    parser = argparse.ArgumentParser(description='Run task samples through a completion backend')
    parser.add_argument('--tasks', required=True, help='TaskSample JSONL file')
    parser.add_argument('--backend-url', required=True, help='Completion endpoint URL (echo://target for a dry run)')
    parser.add_argument('--model', default='', help='Model name sent to the backend')
    parser.add_argument('--api-key-env', default=None, help='Environment variable holding the API key')
    parser.add_argument('--top-p', type=float, default=DEFAULT_TOP_P)
    parser.add_argument('--temperature', type=float, default=DEFAULT_TEMPERATURE)
    parser.add_argument('--max-tokens', type=int, default=DEFAULT_MAX_TOKENS)
    parser.add_argument('--max-retries', type=int, default=DEFAULT_MAX_RETRIES)
    parser.add_argument('--timeout', type=float, default=DEFAULT_TIMEOUT, help='Request timeout in seconds')
    parser.add_argument('--parallel', type=int, default=DEFAULT_PARALLELISM, help='Maximum in-flight requests')
    parser.add_argument('--profile', default='cgl', choices=['cgl', 'pku'], help='Category profile for parsing')
    parser.add_argument('--attach-image', action='store_true', help='Send the canvas image reference')
    parser.add_argument('--no-timing', action='store_true', help='Omit latency from the ledger file')
    parser.add_argument('--out', required=True, help='Output ledger JSONL file')
    args = parser.parse_args(argv)

    try:
        samples = read_task_samples(args.tasks)
        sampling = SamplingConfig(top_p=args.top_p, temperature=args.temperature, max_retries=args.max_retries,
                                  timeout=args.timeout, max_tokens=args.max_tokens)
        config = BackendConfig(url=args.backend_url, model=args.model, api_key_env=args.api_key_env,
                               attach_image=args.attach_image)
        print(f"🚀 Generating {len(samples)} sample(s) via {args.backend_url} (parallel={args.parallel})")
        if args.api_key_env:
            print(f"   Credential from ${args.api_key_env}")
        ledger = generate(samples, backend_from_config(config), sampling, args.parallel, args.profile)
        ledger.write(args.out, include_timing=not args.no_timing)
    except Exception as e:
        print(f"❌ Generation failed: {e}")
        return 1

    print_ledger_summary(ledger)
    write_metadata(metadata_path(args.out), "Generation Metadata", {
        "Tasks": args.tasks,
        "Backend": args.backend_url,
        "Model": args.model or "-",
        "Credential variable": args.api_key_env or "-",
        "top_p": args.top_p,
        "temperature": args.temperature,
        "max_tokens": args.max_tokens,
        "max_retries": args.max_retries,
        "Parallel requests": args.parallel,
        "Samples": len(ledger),
        "Parsed": ledger.n_success,
        **{f"Failures ({kind})": count for kind, count in ledger.failure_counts.items()},
    })
    print(f"✅ Ledger written to {args.out}")
    return 0


def evaluate_main(argv=None):
    import argparse

    parser = argparse.ArgumentParser(description='Evaluate a generation ledger against ground truth')
    parser.add_argument('--ledger', required=True, help='Ledger JSONL file')
    parser.add_argument('--gt', required=True, help='Ground-truth SampleRecord JSONL file')
    parser.add_argument('--assets', default=None, help='Root directory for canvas and saliency images')
    parser.add_argument('--max-elems', type=int, default=DEFAULT_MAX_ELEMS, help='Featurizer capacity for FD')
    parser.add_argument('--regions', default=None, help='JSON file of inpainted regions per source id')
    parser.add_argument('--reference', default=None, choices=['cgl', 'pku'],
                        help='Print the real-data row of this dataset next to the result')
    parser.add_argument('--table', default=None, help='Also write an aligned text table here')
    parser.add_argument('--out', required=True, help='Output report JSON file')
    args = parser.parse_args(argv)

    try:
        ledger = RunLedger.read(args.ledger)
        regions = None
        if args.regions:
            with open(args.regions, 'r', encoding='utf-8') as f:
                regions = json.load(f)
        report = evaluate(ledger, read_records(args.gt), args.assets, args.max_elems, regions)
        write_report(report, args.out, args.table, args.reference)
    except Exception as e:
        print(f"❌ Evaluation failed: {e}")
        return 1

    print(report.to_table(args.reference))
    print(f"✅ Report written to {args.out}")
    return 0


COMMANDS = {"generate": generate_main, "evaluate": evaluate_main}


if __name__ == "__main__":
    if len(sys.argv) < 2 or sys.argv[1] not in COMMANDS:
        print("Usage: python gen_harness.py {generate|evaluate} [options]")
        sys.exit(1)
    sys.exit(COMMANDS[sys.argv[1]](sys.argv[2:]))
