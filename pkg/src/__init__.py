"""
Poster Layout Kit

Core modules for HTML-format poster layouts: domain model, codec, task
construction, metrics, dataset ingestion, generation harness, rendering and
augmentation orchestration. Modules import each other flat; put this
directory on sys.path (the root scripts and tests do).
"""

__version__ = "1.0.0"
__author__ = "Poster Layout Kit Contributors"

__all__ = [
    'layout_core',
    'html_codec',
    'task_builder',
    'metrics',
    'dataset_io',
    'gen_harness',
    'render',
    'augment_orchestrator',
    'utils',
]
