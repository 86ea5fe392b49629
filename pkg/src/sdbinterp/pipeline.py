"""End-to-end hybrid interpolation: covariates -> SDB embedding -> ANFIS.

The fitted model is saved as a versioned JSON document. Floats are written
with their shortest round-trip repr, so save/load is exact and identical
inputs give identical bytes.
"""

from __future__ import annotations

import contextlib
import copy
import dataclasses
import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from . import anfis, embedding
from .baselines import GpConfig, IdwConfig, fit_variogram, gp_fit, idw_predict, kriging_predict
from .errors import ConfigError, ExportError, InsufficientDataError, SdbError
from .evaluation import CvResult, Method, k_fold_cv, METRICS
from .observations import (CovariateMatrix, NeighborGraph, ObservationSet, Scaling,
                           build_covariates, build_neighbor_graph, build_query_covariates)

log = logging.getLogger(__name__)

FORMAT_NAME = "sdbinterp-hybrid"
FORMAT_VERSION = 1


# -- configuration ---------------------------------------------------------------

@dataclass
class GridSpec:
    """Regular raster; bounds left as None fall back to the data bounding box."""

    x_min: float | None = None
    x_max: float | None = None
    y_min: float | None = None
    y_max: float | None = None
    nx: int = 50
    ny: int = 50

    def resolve(self, obs: ObservationSet | None = None) -> "GridSpec":
        vals = [self.x_min, self.x_max, self.y_min, self.y_max]
        if any(v is None for v in vals):
            if obs is None:
                raise ConfigError("grid bounds are not set")
            lo, hi = obs.xy.min(axis=0), obs.xy.max(axis=0)
            vals = [float(v) if v is not None else float(d)
                    for v, d in zip(vals, [lo[0], hi[0], lo[1], hi[1]])]
        g = GridSpec(*vals, nx=int(self.nx), ny=int(self.ny))
        if not (g.x_min < g.x_max and g.y_min < g.y_max):
            raise ConfigError("grid bounds must be ordered (min < max)")
        if g.nx < 1 or g.ny < 1:
            raise ConfigError("grid nx and ny must be >= 1")
        return g

    def centers(self) -> np.ndarray:
        """(ny * nx, 2) cell centres, row-major with rows running along y."""
        dx = (self.x_max - self.x_min) / self.nx
        dy = (self.y_max - self.y_min) / self.ny
        xs = self.x_min + (np.arange(self.nx) + 0.5) * dx
        ys = self.y_min + (np.arange(self.ny) + 0.5) * dy
        X, Y = np.meshgrid(xs, ys)
        return np.column_stack([X.ravel(), Y.ravel()])


@dataclass
class VariogramConfig:
    kind: str = "spherical"
    n_lags: int = 15


@dataclass
class BaselineConfig:
    idw: IdwConfig = field(default_factory=IdwConfig)
    variogram: VariogramConfig = field(default_factory=VariogramConfig)
    gp: GpConfig = field(default_factory=GpConfig)


@dataclass
class PipelineConfig:
    m: int = 10
    seed: int = 0
    value_scaling: bool = True
    normalize_covariates: bool = True
    embedding: embedding.EmbeddingConfig = field(default_factory=embedding.EmbeddingConfig)
    train: anfis.TrainConfig = field(default_factory=anfis.TrainConfig)
    grid: GridSpec = field(default_factory=GridSpec)
    baselines: BaselineConfig = field(default_factory=BaselineConfig)

    def validate(self):
        if self.m < 1:
            raise ConfigError("m must be >= 1")
        self.embedding.validate()
        self.train.validate()

    def with_m(self, m: int) -> "PipelineConfig":
        return dataclasses.replace(self, m=int(m))


def _flatten(obj, prefix=""):
    out = {}
    for f in dataclasses.fields(obj):
        value = getattr(obj, f.name)
        key = prefix + f.name
        if dataclasses.is_dataclass(value):
            out.update(_flatten(value, key + "."))
        else:
            out[key] = value
    return out


def _format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "on" if v else "off"
    return repr(v) if isinstance(v, float) else str(v)


def _parse_value(text: str, current):
    t = text.strip()
    if isinstance(current, bool):
        low = t.lower()
        if low in ("on", "true", "yes", "1"):
            return True
        if low in ("off", "false", "no", "0"):
            return False
        raise ValueError(f"expected on/off, got {t!r}")
    if t.lower() == "none":
        return None
    if isinstance(current, int):
        return int(t)
    if isinstance(current, float):
        return float(t)
    if current is None:
        for kind in (int, float):
            try:
                return kind(t)
            except ValueError:
                pass
    return t


def dump_config(cfg: PipelineConfig) -> str:
    lines = ["# sdbinterp pipeline configuration", "# key = value; '#' starts a comment"]
    section = None
    for key, value in _flatten(cfg).items():
        head = key.rsplit(".", 1)[0] if "." in key else ""
        if head != section:
            section = head
            lines.append("")
            if head:
                lines.append(f"# {head}")
        lines.append(f"{key} = {_format_value(value)}")
    return "\n".join(lines) + "\n"


def parse_config(text: str, base: PipelineConfig | None = None) -> PipelineConfig:
    """Apply ``key = value`` lines on top of ``base`` (defaults if omitted)."""
    cfg = copy.deepcopy(base) if base is not None else PipelineConfig()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        *path, name = key.split(".")
        target = cfg
        try:
            for part in path:
                target = getattr(target, part)
            if dataclasses.is_dataclass(getattr(target, name)):
                raise AttributeError(name)
            current = getattr(target, name)
        except AttributeError:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}") from None
        try:
            setattr(target, name, _parse_value(value, current))
        except ValueError as exc:
            raise ConfigError(f"config line {lineno}: {key}: {exc}") from None
    cfg.validate()
    return cfg


def load_config(path) -> PipelineConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def config_from_flat(flat: dict) -> PipelineConfig:
    return parse_config("\n".join(f"{k} = {_format_value(v)}" for k, v in flat.items()))


# -- model -----------------------------------------------------------------------

@dataclass(eq=False)
class HybridModel:
    obs: ObservationSet
    config: PipelineConfig
    covariates: CovariateMatrix
    sdb: embedding.SdbModel
    rulebase: anfis.RuleBase
    target_min: float = 0.0
    target_span: float = 1.0
    train_rmse: list = field(default_factory=list)

    @property
    def m(self) -> int:
        return self.config.m

    def scale_targets(self, values):
        return (np.asarray(values, dtype=float) - self.target_min) / self.target_span

    def unscale(self, values):
        return np.asarray(values, dtype=float) * self.target_span + self.target_min

    def query_sdb(self, query_xy) -> np.ndarray:
        qc = build_query_covariates(query_xy, self.obs, self.m, self.covariates.scaling)
        return embedding.transform(self.sdb, qc)

    def predict(self, query_xy) -> np.ndarray:
        q = np.asarray(query_xy, dtype=float).reshape(-1, 2)
        if q.shape[0] == 0:
            return np.empty(0)
        return self.unscale(anfis.predict(self.rulebase, self.query_sdb(q)))

    def training_predictions(self) -> np.ndarray:
        return self.unscale(anfis.predict(self.rulebase, self.sdb.Y))

    def to_dict(self) -> dict:
        return {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "config": {k: v for k, v in _flatten(self.config).items()},
            "observations": {"xy": self.obs.xy.tolist(), "values": self.obs.values.tolist()},
            "sdb": embedding.sdb_to_dict(self.sdb),
            "rulebase": self.rulebase.to_dict(),
            "target_scaling": {"minimum": self.target_min, "span": self.target_span},
            "train_rmse": list(self.train_rmse),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.dumps())

    @classmethod
    def from_dict(cls, data: dict) -> "HybridModel":
        if data.get("format") != FORMAT_NAME:
            raise ExportError("not a hybrid model artifact")
        if data.get("version") != FORMAT_VERSION:
            raise ExportError(f"unsupported artifact version {data.get('version')}")
        cfg = config_from_flat(data["config"])
        obs = ObservationSet(data["observations"]["xy"], data["observations"]["values"])
        sdb = embedding.sdb_from_dict(data["sdb"])
        ts = data["target_scaling"]
        return cls(obs, cfg, sdb.train_covariates, sdb, anfis.RuleBase.from_dict(data["rulebase"]),
                   float(ts["minimum"]), float(ts["span"]), list(data.get("train_rmse", [])))

    @classmethod
    def load(cls, path) -> "HybridModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@contextlib.contextmanager
def _stage(name: str):
    try:
        yield
    except (SdbError, ValueError) as exc:
        if not hasattr(exc, "stage"):
            exc.stage = name
            exc.args = (f"[{name}] {exc.args[0] if exc.args else exc}",) + exc.args[1:]
        raise


def stage_covariates(obs: ObservationSet, cfg: PipelineConfig):
    with _stage("covariates"):
        d = cfg.embedding.d
        if obs.n < cfg.m + 1:
            raise InsufficientDataError(f"m={cfg.m} needs at least {cfg.m + 1} observations, got {obs.n}")
        if obs.n < 2 * (d + 1):
            raise InsufficientDataError(f"d={d} needs at least {2 * (d + 1)} observations, got {obs.n}")
        graph = build_neighbor_graph(obs, cfg.m)
        cov = build_covariates(obs, graph, normalize=cfg.normalize_covariates)
    return graph, cov


def stage_embedding(cov: CovariateMatrix, graph: NeighborGraph, cfg: PipelineConfig) -> embedding.SdbModel:
    with _stage("embedding"):
        ecfg = dataclasses.replace(cfg.embedding, rng_seed=cfg.seed)
        return embedding.fit_sdb(cov, graph, ecfg)


def stage_anfis(sdb: embedding.SdbModel, obs: ObservationSet, cfg: PipelineConfig):
    with _stage("anfis"):
        if cfg.value_scaling:
            lo = float(obs.values.min())
            span = float(obs.values.max() - lo) or 1.0
        else:
            lo, span = 0.0, 1.0
        targets = (obs.values - lo) / span
        rb = anfis.init_rulebase(sdb.Y)
        tcfg = dataclasses.replace(cfg.train, rng_seed=cfg.seed)
        report = anfis.fit(rb, sdb.Y, targets, tcfg)
    return report, lo, span


def fit_pipeline(obs: ObservationSet, cfg: PipelineConfig | None = None) -> HybridModel:
    """Neighbour covariates, SDB extraction and ANFIS training, in that order."""
    cfg = cfg or PipelineConfig()
    cfg.validate()
    graph, cov = stage_covariates(obs, cfg)
    sdb = stage_embedding(cov, graph, cfg)
    report, lo, span = stage_anfis(sdb, obs, cfg)
    return HybridModel(obs, cfg, cov, sdb, report.rulebase, lo, span, list(report.rmse))


# -- rasters ---------------------------------------------------------------------

@dataclass(eq=False)
class FieldGrid:
    """Raster of estimates; ``values[j, i]`` is the cell at row j (y) and column i (x)."""

    spec: GridSpec
    values: np.ndarray
    mask: np.ndarray  # True where the value is valid

    @property
    def nx(self) -> int:
        return self.spec.nx

    @property
    def ny(self) -> int:
        return self.spec.ny

    @property
    def bounds(self):
        s = self.spec
        return (s.x_min, s.x_max, s.y_min, s.y_max)

    def __eq__(self, other):
        if not isinstance(other, FieldGrid):
            return NotImplemented
        return (self.bounds == other.bounds and self.nx == other.nx and self.ny == other.ny
                and np.array_equal(self.mask, other.mask)
                and np.array_equal(self.values[self.mask], other.values[other.mask]))


def predict_grid(model: HybridModel, grid: GridSpec | None = None) -> FieldGrid:
    spec = (grid or model.config.grid).resolve(model.obs)
    values = model.predict(spec.centers()).reshape(spec.ny, spec.nx)
    mask = np.isfinite(values)
    if not mask.all():
        log.warning("%d of %d grid cells gave non-finite predictions and are masked",
                    int((~mask).sum()), mask.size)
    return FieldGrid(spec, values, mask)


def write_grid(grid: FieldGrid, path):
    """Delimited grid: a bounds/size header row, then one row of values per y row."""
    lines = ["x_min,x_max,y_min,y_max,nx,ny",
             ",".join(repr(float(b)) for b in grid.bounds) + f",{grid.nx},{grid.ny}"]
    for j in range(grid.ny):
        lines.append(",".join(repr(float(v)) if ok else "nan"
                              for v, ok in zip(grid.values[j], grid.mask[j])))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_grid(path) -> FieldGrid:
    with open(path) as fh:
        rows = [line.strip() for line in fh if line.strip()]
    head = rows[1].split(",")
    spec = GridSpec(*(float(v) for v in head[:4]), nx=int(head[4]), ny=int(head[5]))
    values = np.array([[float(v) for v in r.split(",")] for r in rows[2:]])
    if values.shape != (spec.ny, spec.nx):
        raise ExportError(f"grid body has shape {values.shape}, header says {(spec.ny, spec.nx)}")
    return FieldGrid(spec, values, np.isfinite(values))


def write_pgm(grid: FieldGrid, path):
    """8-bit binary graymap scaled linearly between the grid min and max.

    The top image row is the highest y row. The min/max go to a sidecar
    ``<path>.txt``; a constant grid is written as uniform 128 and masked
    cells as 0.
    """
    valid = grid.values[grid.mask]
    lo, hi = float(valid.min()), float(valid.max())
    if hi > lo:
        img = np.round((grid.values - lo) / (hi - lo) * 255.0)
    else:
        img = np.full(grid.values.shape, 128.0)
    img = np.where(grid.mask, img, 0.0).astype(np.uint8)[::-1]
    with open(path, "wb") as fh:
        fh.write(f"P5\n{grid.nx} {grid.ny}\n255\n".encode("ascii"))
        fh.write(img.tobytes())
    with open(str(path) + ".txt", "w") as fh:
        fh.write(f"min={lo!r}\nmax={hi!r}\n")


def export_raster(grid: FieldGrid, path, fmt: str = "grid"):
    if not grid.mask.any():
        raise ExportError("every grid cell is masked; nothing to export")
    if fmt == "grid":
        write_grid(grid, path)
    elif fmt == "pgm":
        write_pgm(grid, path)
    else:
        raise ConfigError(f"unknown raster format {fmt!r}")
    return path


# -- methods for evaluation ------------------------------------------------------

def hybrid_method(cfg: PipelineConfig, name: str = "Hybrid") -> Method:
    def fit_predict(train, qxy):
        return fit_pipeline(train, cfg).predict(qxy)
    return Method(name, fit_predict, max(cfg.m + 1, 2 * (cfg.embedding.d + 1)))


def baseline_methods(cfg: PipelineConfig) -> list:
    b = cfg.baselines

    def ok(train, qxy):
        return kriging_predict(train, qxy, fit_variogram(train, b.variogram.kind, b.variogram.n_lags))[0]

    return [
        Method("Ordinary Kriging", ok, 10),
        Method("IDW", lambda train, qxy: idw_predict(train, qxy, b.idw), 1),
        Method("Gaussian Process", lambda train, qxy: gp_fit(train, b.gp).predict(qxy)[0], 2),
    ]


def all_methods(cfg: PipelineConfig) -> list:
    return baseline_methods(cfg) + [hybrid_method(cfg, "Our Method")]


# -- m sweep ---------------------------------------------------------------------

@dataclass
class SweepEntry:
    m: int
    cv: CvResult | None = None
    grid: FieldGrid | None = None
    error: str | None = None


@dataclass
class SweepResult:
    entries: list

    def to_csv(self) -> str:
        lines = ["m,status," + ",".join(METRICS)]
        for e in self.entries:
            if e.error is not None:
                lines.append(f"{e.m},failed: {e.error}" + "," * len(METRICS))
            else:
                r = e.cv.mean_report
                lines.append(",".join([str(e.m), "ok"] + ["" if getattr(r, k) is None
                                                          else repr(float(getattr(r, k))) for k in METRICS]))
        return "\n".join(lines) + "\n"


def sweep_m(obs: ObservationSet, cfg: PipelineConfig, m_values, k: int = 10,
            grid: GridSpec | None = None) -> SweepResult:
    """CV metrics and a predicted raster for every m, all with the same seed."""
    entries = []
    for m in m_values:
        entry = SweepEntry(int(m))
        try:
            mcfg = cfg.with_m(m)
            entry.cv = k_fold_cv(obs, hybrid_method(mcfg), k, cfg.seed)
            entry.grid = predict_grid(fit_pipeline(obs, mcfg), grid or cfg.grid)
        except SdbError as exc:
            log.warning("sweep entry m=%s failed: %s", m, exc)
            entry.error = str(exc)
            entry.cv = entry.grid = None
        entries.append(entry)
    return SweepResult(entries)


def write_sweep(result: SweepResult, out_dir, fmt: str = "grid") -> list:
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    with open(os.path.join(out_dir, "sweep_metrics.csv"), "w") as fh:
        fh.write(result.to_csv())
    for e in result.entries:
        if e.grid is not None:
            ext = "pgm" if fmt == "pgm" else "csv"
            paths.append(export_raster(e.grid, os.path.join(out_dir, f"field_m{e.m}.{ext}"), fmt))
    return paths
