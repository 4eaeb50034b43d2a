"""Shared fixtures: model manifolds and one-shot experiment runs.

Experiment runs are session-scoped and lazy so the acceptance tests can
share a single execution per pipeline no matter how many criteria read it.
"""

import json
from pathlib import Path

import pytest
from hypothesis import settings

from eigentubes import config as config_mod
from eigentubes import experiments, geometry

settings.register_profile("suite", derandomize=True, max_examples=60,
                          deadline=None)
settings.load_profile("suite")


@pytest.fixture(scope="session")
def torus():
    return geometry.flat_torus()


@pytest.fixture(scope="session")
def sphere():
    return geometry.sphere()


@pytest.fixture(scope="session")
def ctorus():
    return geometry.conformal_torus(0.1, 1)


def make_config(experiment, out_dir, seed=7, **params):
    tree = {
        "schema_version": config_mod.SCHEMA_VERSION,
        "experiment": experiment,
        "seed": seed,
        "output_dir": str(out_dir),
        "params": params,
    }
    return config_mod.validate_tree(tree)


@pytest.fixture(scope="session")
def run_pipeline(tmp_path_factory):
    """Callable returning (manifest, output dir) for a named pipeline, cached."""
    cache = {}
    root = tmp_path_factory.mktemp("pipeline-runs")

    def run(name, key=None, **params):
        key = key or name
        if key not in cache:
            out = root / key
            cfg = make_config(name, out, **params)
            manifest = experiments.run_experiment(cfg)
            cache[key] = (manifest, out)
        return cache[key]

    return run


def load_manifest(out_dir):
    with open(Path(out_dir) / "manifest.json") as fh:
        return json.load(fh)


def read_csv(path):
    rows = [line.rstrip("\n").split(",") for line in open(path)]
    return rows[0], rows[1:]
