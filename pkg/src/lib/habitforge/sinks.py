"""
Artifact I/O protocol definitions.
These are abstract base classes the command line (or a test) implements.

Analyses read cohorts through a CohortSource and write every table, JSON
document and figure through an ArtifactSink, so the same application code
runs against a directory on disk or an in-memory recorder.
"""
import json
import logging
import math
from pathlib import Path

import matplotlib
import numpy as np
import pandas as pd

from .cohort import load_cohort, write_frame
from .constants import Files

logger = logging.getLogger(__name__)

SVG_HASH_SALT = "habitforge"


def _plain(value):
    """Convert numpy scalars/arrays and non-finite floats into JSON-ready values."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, np.generic):
        return _plain(value.item())
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def to_json_text(data):
    """Stable JSON text: sorted keys, two-space indent, NaN as null, trailing newline."""
    return json.dumps(_plain(data), indent=2, sort_keys=True, allow_nan=False) + "\n"


class CohortSource:
    """Abstract interface for reading analysis inputs."""

    def load_cohort(self, rules=None):
        """
        Load members, visits and interventions.

        Args:
            rules: Optional CohortRules filter

        Returns:
            CohortDataset
        """
        raise NotImplementedError

    def has(self, name):
        """
        Check whether a named artifact exists.

        Args:
            name: File name, e.g. Files.TRUTH
        """
        raise NotImplementedError

    def read_json(self, name):
        """
        Read a JSON artifact written by an earlier subcommand.

        Args:
            name: File name
        """
        raise NotImplementedError

    def read_table(self, name):
        """
        Read a CSV artifact written by an earlier subcommand.

        Args:
            name: File name

        Returns:
            pandas DataFrame
        """
        raise NotImplementedError


class ArtifactSink:
    """Abstract interface for writing analysis outputs."""

    def write_table(self, name, frame):
        """
        Write a DataFrame as CSV.

        Args:
            name: File name, e.g. Files.CLUSTERS
            frame: pandas DataFrame (index is not written)
        """
        raise NotImplementedError

    def write_json(self, name, data):
        """
        Write a JSON document.

        Args:
            name: File name
            data: dict/list tree; numpy values and NaN are converted
        """
        raise NotImplementedError

    def write_figure(self, name, figure):
        """
        Write a matplotlib Figure as SVG.

        Args:
            name: File name ending in .svg
            figure: matplotlib.figure.Figure
        """
        raise NotImplementedError

    @property
    def outputs(self):
        """Names written so far, in order."""
        raise NotImplementedError


# ============================================================================
# DIRECTORY IMPLEMENTATIONS
# ============================================================================
class DirectorySource(CohortSource):
    """Reads the core CSV files and JSON artifacts from one directory."""

    def __init__(self, directory):
        self.directory = Path(directory)

    def load_cohort(self, rules=None):
        logger.info("Loading cohort from %s", self.directory)
        return load_cohort(self.directory, rules)

    def has(self, name):
        return (self.directory / name).exists()

    def read_json(self, name):
        with open(self.directory / name, encoding="utf-8") as handle:
            return json.load(handle)

    def read_table(self, name):
        return pd.read_csv(self.directory / name)


class DirectorySink(ArtifactSink):
    """Writes artifacts into a directory, creating it on first use."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self._outputs = []

    def _path(self, name):
        self.directory.mkdir(parents=True, exist_ok=True)
        self._outputs.append(name)
        logger.debug("Writing %s", self.directory / name)
        return self.directory / name

    def write_table(self, name, frame):
        write_frame(frame, self._path(name))

    def write_json(self, name, data):
        self._path(name).write_text(to_json_text(data), encoding="utf-8")

    def write_figure(self, name, figure):
        path = self._path(name)
        with matplotlib.rc_context({"svg.hashsalt": SVG_HASH_SALT}):
            figure.savefig(path, format="svg", metadata={"Date": None})

    @property
    def outputs(self):
        return list(self._outputs)


def write_manifest(sink, subcommand, config, details=None):
    """
    Record the resolved config and every output of a subcommand run.

    Args:
        details: Optional run facts beyond the config (cut points, contrasts)
    """
    outputs = sorted(set(sink.outputs))
    manifest = {"subcommand": subcommand, "config": config.to_dict(), "outputs": outputs}
    if details:
        manifest["details"] = details
    sink.write_json(Files.manifest(subcommand), manifest)
