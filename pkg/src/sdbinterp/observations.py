"""Scattered observations, the m-nearest-neighbour graph and the
neighbouring spatial covariate matrix built on top of it.

Row layout of a covariate row for point i with neighbours j = 1..m::

    [x_i, y_i, x_i^1, y_i^1, phi_i^1, ..., x_i^m, y_i^m, phi_i^m]

so every row has 3m + 2 entries.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import os
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import InsufficientDataError, ParseError, RejectionError

log = logging.getLogger(__name__)

DEFAULT_SCHEMA = {"x": ("x",), "y": ("y",), "value": ("value", "val")}

# rows processed per block in the brute-force neighbour search
_CHUNK = 512


@dataclass(frozen=True)
class Observation:
    x: float
    y: float
    value: float


@dataclass(frozen=True, eq=False)
class ObservationSet:
    """Deduplicated scattered observations.

    ``xy`` is an (N, 2) array of planar coordinates, ``values`` the
    measured attribute at each location.
    """

    xy: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        xy = np.array(self.xy, dtype=float).reshape(-1, 2)
        values = np.array(self.values, dtype=float).reshape(-1)
        if xy.shape[0] != values.shape[0]:
            raise ValueError("xy and values disagree on the number of points")
        if not (np.all(np.isfinite(xy)) and np.all(np.isfinite(values))):
            raise RejectionError("observations must be finite")
        xy.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "xy", xy)
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return int(self.values.shape[0])

    def __len__(self):
        return self.n

    @property
    def points(self) -> list[Observation]:
        return [Observation(float(x), float(y), float(v))
                for (x, y), v in zip(self.xy, self.values)]

    def subset(self, index) -> "ObservationSet":
        index = np.asarray(index)
        return ObservationSet(self.xy[index], self.values[index])

    @classmethod
    def from_points(cls, points: Iterable[Sequence[float]]) -> "ObservationSet":
        """Build from (x, y, value) triples, averaging duplicate coordinates."""
        arr = np.array(list(points), dtype=float).reshape(-1, 3)
        xy, values = _dedup(arr[:, :2], arr[:, 2])
        return cls(xy, values)


@dataclass(frozen=True, eq=False)
class NeighborGraph:
    m: int
    indices: np.ndarray    # (N, m) neighbour ids, nearest first
    distances: np.ndarray  # (N, m) Euclidean distances, non-decreasing per row

    @property
    def n(self) -> int:
        return int(self.indices.shape[0])


@dataclass(frozen=True, eq=False)
class Scaling:
    """Per-column min/max used for min-max normalisation.

    Constant columns (max == min) normalise to 0.
    """

    minimum: np.ndarray
    maximum: np.ndarray

    @property
    def span(self) -> np.ndarray:
        return self.maximum - self.minimum

    @classmethod
    def identity(cls, width: int) -> "Scaling":
        return cls(np.zeros(width), np.ones(width))

    def apply(self, raw: np.ndarray) -> np.ndarray:
        span = self.span
        safe = np.where(span > 0, span, 1.0)
        out = (raw - self.minimum) / safe
        out[:, span <= 0] = 0.0
        return out

    def invert(self, normalized: np.ndarray) -> np.ndarray:
        return normalized * self.span + self.minimum


@dataclass(frozen=True, eq=False)
class CovariateMatrix:
    """Neighbouring spatial covariates, raw and min-max normalised."""

    m: int
    raw: np.ndarray
    rows: np.ndarray
    scaling: Scaling

    @property
    def n(self) -> int:
        return int(self.rows.shape[0])

    @property
    def width(self) -> int:
        return 3 * self.m + 2

    def denormalize(self) -> np.ndarray:
        return self.scaling.invert(self.rows)


def _dedup(xy: np.ndarray, values: np.ndarray):
    keys, first, inverse, counts = np.unique(
        xy, axis=0, return_index=True, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    if len(keys) == len(xy):
        return xy, values
    sums = np.zeros(len(keys))
    np.add.at(sums, inverse, values)
    means = sums / counts
    for k in np.flatnonzero(counts > 1):
        log.warning("%d observations share coordinates (%g, %g); using their mean %g",
                    counts[k], keys[k, 0], keys[k, 1], means[k])
    # keep first-appearance order
    order = np.argsort(first, kind="stable")
    return keys[order], means[order]


def _resolve_columns(header: list[str], schema: Mapping[str, str] | None):
    names = [h.strip() for h in header]
    lookup = {name: i for i, name in enumerate(names)}
    cols = {}
    for field, candidates in DEFAULT_SCHEMA.items():
        if schema and field in schema:
            candidates = (schema[field],)
        for name in candidates:
            if name in lookup:
                cols[field] = lookup[name]
                break
        else:
            raise ParseError(f"missing column for {field!r} (looked for {', '.join(candidates)})", line=1)
    if "z" in lookup and not (schema and "z" in schema.values()):
        log.warning("ignoring z column; interpolation is two-dimensional")
    return cols


def load_observations(source, schema: Mapping[str, str] | None = None,
                      delimiter: str = ",") -> ObservationSet:
    """Read delimited text with a header row into an ObservationSet.

    ``source`` is a path, a text stream, or a string of CSV content (a string
    containing a newline is taken as content). ``schema`` maps the fields
    ``x``, ``y``, ``value`` to column names; by default ``x``, ``y`` and
    ``value`` (or ``val``) are used.
    """
    if isinstance(source, (str, os.PathLike)) and not (isinstance(source, str) and "\n" in source):
        with open(source, newline="") as fh:
            return load_observations(fh, schema, delimiter)
    if isinstance(source, str):
        source = io.StringIO(source)

    reader = csv.reader(source, delimiter=delimiter)
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("empty input, header row required", line=1) from None
    cols = _resolve_columns(header, schema)

    triples = []
    for row in reader:
        line = reader.line_num
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", line=line)
        vals = []
        for field in ("x", "y", "value"):
            text = row[cols[field]].strip()
            try:
                v = float(text)
            except ValueError:
                raise ParseError(f"cannot parse {field}={text!r} as a number", line=line) from None
            if not math.isfinite(v):
                raise RejectionError(f"non-finite {field}={text!r}", line=line)
            vals.append(v)
        triples.append(vals)

    if not triples:
        raise InsufficientDataError("no observations read")
    obs = ObservationSet.from_points(triples)
    if obs.n < 2:
        raise InsufficientDataError(f"need at least 2 distinct observations, got {obs.n}")
    return obs


def knn_search(targets: np.ndarray, sources: np.ndarray, m: int, exclude_self: bool):
    n_t = targets.shape[0]
    indices = np.empty((n_t, m), dtype=np.int64)
    distances = np.empty((n_t, m))
    for start in range(0, n_t, _CHUNK):
        stop = min(start + _CHUNK, n_t)
        diff = targets[start:stop, None, :] - sources[None, :, :]
        dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        if exclude_self:
            rows = np.arange(stop - start)
            dist[rows, rows + start] = np.inf
        # stable sort: equal distances keep the lower source index first
        order = np.argsort(dist, axis=1, kind="stable")[:, :m]
        indices[start:stop] = order
        distances[start:stop] = np.take_along_axis(dist, order, axis=1)
    return indices, distances


def build_neighbor_graph(obs: ObservationSet, m: int) -> NeighborGraph:
    """The m nearest other observations of every observation."""
    m = int(m)
    if m < 1:
        raise ValueError("m must be a positive integer")
    if m >= obs.n:
        raise InsufficientDataError(f"m={m} neighbours need at least {m + 1} observations, got {obs.n}")
    idx, dist = knn_search(obs.xy, obs.xy, m, exclude_self=True)
    return NeighborGraph(m, idx, dist)


def _assemble(own_xy: np.ndarray, obs: ObservationSet, indices: np.ndarray) -> np.ndarray:
    n, m = indices.shape
    raw = np.empty((n, 3 * m + 2))
    raw[:, 0:2] = own_xy
    raw[:, 2::3] = obs.xy[indices, 0]
    raw[:, 3::3] = obs.xy[indices, 1]
    raw[:, 4::3] = obs.values[indices]
    return raw


def build_covariates(obs: ObservationSet, graph: NeighborGraph,
                     normalize: bool = True) -> CovariateMatrix:
    """Covariate matrix of the training observations.

    With ``normalize`` each column is min-max scaled to [0, 1]; a constant
    column maps to 0 and is reported with a warning.
    """
    if graph.n != obs.n:
        raise ValueError("graph was built from a different observation set")
    raw = _assemble(obs.xy, obs, graph.indices)
    if normalize:
        scaling = Scaling(raw.min(axis=0), raw.max(axis=0))
        flat = np.flatnonzero(scaling.span <= 0)
        if flat.size:
            log.warning("constant covariate columns %s normalise to 0", flat.tolist())
    else:
        scaling = Scaling.identity(raw.shape[1])
    return CovariateMatrix(graph.m, raw, scaling.apply(raw), scaling)


def query_neighbors(query_points, obs: ObservationSet, m: int) -> NeighborGraph:
    q = np.asarray(query_points, dtype=float).reshape(-1, 2)
    m = int(m)
    if m > obs.n:
        raise InsufficientDataError(f"m={m} exceeds the {obs.n} available observations")
    if q.shape[0] == 0:
        return NeighborGraph(m, np.empty((0, m), dtype=np.int64), np.empty((0, m)))
    idx, dist = knn_search(q, obs.xy, m, exclude_self=False)
    return NeighborGraph(m, idx, dist)


def build_query_covariates(query_points, obs: ObservationSet, m: int,
                           scaling: Scaling) -> CovariateMatrix:
    """Covariates for unsampled locations, scaled with the training scaling.

    Neighbours are drawn from ``obs`` only and a query point coinciding with
    an observation keeps it as its nearest neighbour at distance 0. No
    clamping is applied, so locations outside the training bounding box can
    normalise outside [0, 1].
    """
    q = np.asarray(query_points, dtype=float).reshape(-1, 2)
    graph = query_neighbors(q, obs, m)
    raw = _assemble(q, obs, graph.indices)
    return CovariateMatrix(int(m), raw, scaling.apply(raw), scaling)
