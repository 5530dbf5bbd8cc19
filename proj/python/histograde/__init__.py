# Copyright 2026 The Histograde Authors. All Rights Reserved.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Python access to the histograde core: pipeline stages, patch features,
rank statistics and classification metrics."""

import json as _json

from . import _core
from ._core import (
    HistogradeError,
    embed_patch,
    make_folds,
    positional_encoding,
    probability_of_superiority,
    rank_biserial,
    read_embeddings,
    roc_auc,
)

__all__ = [
    "HistogradeError",
    "embed_patch",
    "make_folds",
    "mann_whitney",
    "metric_report",
    "positional_encoding",
    "probability_of_superiority",
    "rank_biserial",
    "read_embeddings",
    "resolve_config",
    "roc_auc",
    "run_pipeline",
    "run_stage",
]

STAGES = ("synth", "preprocess", "embed", "train", "evaluate", "stats", "visualize")


def _config_text(config):
    if config is None:
        return ""
    if isinstance(config, str):
        return config
    return _json.dumps(config)


def resolve_config(config=None):
    """Fully resolved run configuration (defaults filled in) as a dict."""
    return _json.loads(_core.resolve_config(_config_text(config)))


def run_stage(stage, out, config=None):
    _core.run_stage(stage, _config_text(config), str(out))


def run_pipeline(out, config=None):
    _core.run_pipeline(_config_text(config), str(out))


def mann_whitney(x, y):
    """One-sided test that x tends to exceed y; returns a dict."""
    return _json.loads(_core.mann_whitney(list(map(float, x)), list(map(float, y))))


def metric_report(labels, probabilities, resamples=1000, alpha=0.05, seed=0, threads=1):
    return _json.loads(
        _core.metric_report(list(labels), probabilities, resamples, alpha, seed, threads)
    )
