"""Referring-expression segmentation on 3D point clouds.

Thin Python layer over the native `_dres` module. Configurations and reports
cross the boundary as plain dicts.
"""

import json
import os

from . import _dres
from ._dres import (
    DresError,
    ParseError,
    Scene,
    acc_at,
    load_dataset,
    load_scenes,
    miou,
    miou_s,
    parse_tagged_text,
    read_scene,
    run_cli,
    scene_violations,
    tokenize,
    write_scene,
)

__all__ = [
    "DresError",
    "ParseError",
    "Scene",
    "acc_at",
    "dataset_stats",
    "default_pipeline_config",
    "default_synth_config",
    "evaluate",
    "format_metrics",
    "gen_scene",
    "load_dataset",
    "load_scenes",
    "metrics_report",
    "miou",
    "miou_s",
    "oversegment",
    "parse_tagged_text",
    "predict",
    "read_scene",
    "reference_check",
    "run_cli",
    "scene_violations",
    "tokenize",
    "train",
    "write_scene",
    "write_synthetic_dataset",
]


def _dump(config):
    return "" if config is None else json.dumps(config)


def _paths(files):
    if isinstance(files, (str, os.PathLike)):
        return [os.fspath(files)]
    return [os.fspath(f) for f in files]


def default_synth_config():
    return json.loads(_dres.default_synth_config_json())


def default_pipeline_config():
    return json.loads(_dres.default_pipeline_config_json())


def dataset_stats(records):
    """Summary statistics over one or more record files."""
    return json.loads(_dres.dataset_stats_json(_paths(records)))


def reference_check(records, tolerance=0.10):
    return _dres.reference_check(_paths(records), tolerance)


def oversegment(scene, config=None):
    """Superpoint id per point, using the `overseg` section of a pipeline config."""
    return _dres.oversegment(scene, _dump(config))


def gen_scene(config=None, index=0):
    return _dres.gen_scene(_dump(config), index)


def write_synthetic_dataset(out_dir, config=None):
    _dres.write_synthetic_dataset(_dump(config), os.fspath(out_dir))


def train(data_dir, checkpoint, config=None, seed=None):
    """Train on a data directory and write a checkpoint.

    Returns a dict with `steps`, the per-epoch `log` and the resolved `config`.
    """
    out = _dres.train(os.fspath(data_dir), os.fspath(checkpoint), _dump(config), seed)
    out["config"] = json.loads(out["config"])
    return out


def predict(data_dir, checkpoint, config=None):
    """Point-index masks for every description, in unit order."""
    return _dres.predict(os.fspath(data_dir), os.fspath(checkpoint), _dump(config))


def evaluate(data_dir, predictions):
    return json.loads(_dres.evaluate_json(os.fspath(data_dir), list(predictions)))


def metrics_report(ious, long_text=None, complex_text=None):
    n = len(ious)
    return json.loads(
        _dres.metrics_report_json(
            ious,
            list(long_text) if long_text is not None else [False] * n,
            list(complex_text) if complex_text is not None else [False] * n,
        )
    )


def format_metrics(report, format="table"):
    return _dres.format_metrics(json.dumps(report), format)
