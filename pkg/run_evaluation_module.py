#!/usr/bin/env python3
"""
Poster Layout Evaluation Runner
Ingest -> build tasks -> generate -> evaluate -> render, in one command
"""

import argparse
import sys
import subprocess
import shutil
from pathlib import Path
from datetime import datetime

# Constants
REQUIRED_SCRIPTS = ['ingest_dataset.py', 'build_task_samples.py', 'run_generation.py',
                    'evaluate_ledger.py', 'render_layouts.py']
SEPARATOR_WIDTH = 50
TASK_KINDS = ['GenI', 'GenIT', 'GenITS', 'GenITP', 'Completion', 'Recover', 'Refinement']


def run_command(cmd, description):
    """Run a command and handle errors."""
    print(f"Running: {' '.join(cmd)}")
    try:
        subprocess.run(cmd, check=True)
    except subprocess.CalledProcessError as e:
        print_error(description)
        sys.exit(e.returncode)
    except FileNotFoundError:
        print(f"ERROR: Command not found: {cmd[0]}")
        sys.exit(1)


def validate_inputs(annotations, images):
    """Validate input files and required scripts exist."""
    if not Path(annotations).is_file():
        print(f"ERROR: Annotation file not found: {annotations}")
        sys.exit(1)
    if not Path(images).is_dir():
        print(f"ERROR: Image directory not found: {images}")
        sys.exit(1)

    root = Path(__file__).resolve().parent
    for script in REQUIRED_SCRIPTS:
        if not (root / script).is_file():
            print(f"ERROR: Required script not found: {script}")
            sys.exit(1)


def setup_output_directory(output_dir, stale):
    """Create output directory and remove outputs of a previous run."""
    Path(output_dir).mkdir(parents=True, exist_ok=True)

    for item in stale:
        path = Path(item)
        if path.exists():
            if path.is_dir():
                shutil.rmtree(path)
            else:
                path.unlink()


def print_header(args, output_dir):
    """Print startup information."""
    print("=" * SEPARATOR_WIDTH)
    print("Poster Layout Evaluation")
    print(f"Started: {datetime.now().strftime('%H:%M:%S')}")
    print(f"Annotations: {Path(args.annotations).name} ({args.profile.upper()})")
    print(f"Backend: {args.backend_url}")
    print(f"Tasks: {', '.join(args.kinds)}")
    print(f"Output: {output_dir}")
    print("=" * SEPARATOR_WIDTH)


def print_error(description):
    """Print failure message."""
    print("\n" + "=" * SEPARATOR_WIDTH)
    print(f"❌ {description} failed")
    print(f"Stopped: {datetime.now().strftime('%H:%M:%S')}")
    print("=" * SEPARATOR_WIDTH)


def print_success(report, table):
    """Print success message."""
    print("\n" + "=" * SEPARATOR_WIDTH)
    print("✅ Evaluation Complete!")
    print(f"Report: {report}")
    print(f"Table: {table}")
    print(f"Finished: {datetime.now().strftime('%H:%M:%S')}")
    print("=" * SEPARATOR_WIDTH)


def main():
    parser = argparse.ArgumentParser(description="Poster layout evaluation workflow")
    parser.add_argument('annotations', help='Raw CGL/PKU annotation file')
    parser.add_argument('images', help='Directory of canvas images')
    parser.add_argument('output_directory', help='Directory for all outputs')
    parser.add_argument('--profile', default='cgl', choices=['cgl', 'pku'])
    parser.add_argument('--saliency', default=None, help='Directory of saliency maps')
    parser.add_argument('--backend-url', default='echo://target',
                        help='Completion endpoint (default: echo://target dry run)')
    parser.add_argument('--model', default='')
    parser.add_argument('--api-key-env', default=None)
    parser.add_argument('--kinds', nargs='+', default=TASK_KINDS, choices=TASK_KINDS)
    parser.add_argument('--split', default='test', choices=['train', 'val', 'test', 'all'],
                        help='Records to evaluate on (default: test)')
    parser.add_argument('--seed', type=int, default=42)
    parser.add_argument('--parallel', '-p', type=int, default=4, choices=range(1, 65),
                        help='In-flight requests (default: 4)')
    args = parser.parse_args()

    root = Path(__file__).resolve().parent
    output_dir = Path(args.output_directory).resolve()
    images = Path(args.images).resolve()
    assets = images.parent
    records = output_dir / 'records.jsonl'
    tasks = output_dir / 'tasks.jsonl'
    ledger = output_dir / 'ledger.jsonl'
    report = output_dir / 'report.json'
    table = output_dir / 'report.txt'
    renders = output_dir / 'renders'

    validate_inputs(args.annotations, args.images)
    setup_output_directory(output_dir, [records, tasks, ledger, report, table, renders])
    print_header(args, output_dir)

    ingest_cmd = [sys.executable, str(root / 'ingest_dataset.py'), '--profile', args.profile,
                  '--annotations', args.annotations, '--images', str(images),
                  '--assets-root', str(assets), '--out', str(records)]
    if args.saliency:
        ingest_cmd += ['--saliency', args.saliency]
    generate_cmd = [sys.executable, str(root / 'run_generation.py'), '--tasks', str(tasks),
                    '--backend-url', args.backend_url, '--model', args.model, '--profile', args.profile,
                    '--parallel', str(args.parallel), '--out', str(ledger)]
    if args.api_key_env:
        generate_cmd += ['--api-key-env', args.api_key_env]
    build_cmd = [sys.executable, str(root / 'build_task_samples.py'), '--records', str(records),
                 '--seed', str(args.seed), '--out', str(tasks), '--kinds', *args.kinds]
    if args.split != 'all':
        build_cmd += ['--split', args.split]

    try:
        steps = [
            (ingest_cmd, "Ingesting annotations"),
            (build_cmd, "Building task samples"),
            (generate_cmd, "Generating layouts"),
            ([sys.executable, str(root / 'evaluate_ledger.py'), '--ledger', str(ledger), '--gt', str(records),
              '--assets', str(assets), '--reference', args.profile, '--table', str(table), '--out', str(report)],
             "Evaluating"),
            ([sys.executable, str(root / 'render_layouts.py'), '--layouts', str(ledger), '--assets', str(assets),
              '--out', str(renders), '--masks'],
             "Rendering overlays and text masks"),
        ]

        for i, (cmd, description) in enumerate(steps, 1):
            print(f"\nStep {i}: {description}")
            run_command(cmd, description)

        print_success(report, table)

    except KeyboardInterrupt:
        print("\nWorkflow interrupted")
        sys.exit(130)


if __name__ == '__main__':
    main()
