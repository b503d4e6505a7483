"""Python access to the synthaug C++ core."""

import json as _json

from ._synthaug import (
    ConfigError,
    FormatError,
    NumericError,
    ShapeError,
    StageError,
    alpha_bars,
    classification_metrics,
    decode_pgm,
    encode_pgm,
    farthest_point_order,
    fid_from_features,
    format_cell,
    frechet_distance,
    generate_corpus,
    metrics_from_confusion,
    parameter_counts,
    read_report,
    run_stats,
)
from . import _synthaug

STAGES = (
    "gen-corpus",
    "scenario",
    "train-ddpm",
    "train-pggan",
    "synth",
    "fid",
    "train-classifier",
    "report",
)


def _text(config):
    return config if isinstance(config, str) else _json.dumps(config)


def parse_config(config):
    """Return the fully defaulted config as a dict. Accepts a dict or JSON text."""
    return _json.loads(_synthaug.parse_config(_text(config)))


def run_experiment(config, out=None, seed=None):
    return _synthaug.run_experiment(_text(config), out, seed)


def run_stage(stage, config, out=None, seed=None):
    _synthaug.run_stage(stage, _text(config), out, seed)
