"""File formats: event CSV with a unit sidecar, grid CSV and GeoJSON covariates,
fit records and residual outputs."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import shapely
from shapely.geometry import shape

from .errors import InputError
from .geometry import CovariateMap, Domain, GridSpec
from .model import EventCatalog, ModelParams
from .residuals import ResidualMap, ResidualSeries

TIME_TO_DAYS = {"seconds": 1.0 / 86400.0, "minutes": 1.0 / 1440.0, "hours": 1.0 / 24.0, "days": 1.0,
                "weeks": 7.0}
LENGTH_TO_FEET = {"feet": 1.0, "meters": 1.0 / 0.3048, "kilometers": 1000.0 / 0.3048, "miles": 5280.0}
GRID_KEYS = ("origin_x", "origin_y", "cell_dx", "cell_dy", "ncols", "nrows")


@dataclass
class EventMeta:
    """Sidecar metadata for an event file."""

    time_unit: str = "days"
    length_unit: str = "feet"
    epoch: str | None = None
    T: float | None = None
    target_mark: str = "target"
    indicator_marks: list = field(default_factory=list)

    @classmethod
    def from_dict(cls, d: dict) -> "EventMeta":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InputError(f"unknown event metadata keys: {sorted(unknown)}")
        meta = cls(**d)
        meta.indicator_marks = [str(m) for m in meta.indicator_marks]
        if meta.T is not None:
            meta.T = float(meta.T)
        return meta

    def to_dict(self) -> dict:
        return asdict(self)


def sidecar_path(events_path) -> Path:
    p = Path(events_path)
    return p.with_name(p.stem + ".meta.json")


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _float(text: str, what: str, line: int) -> float:
    try:
        v = float(text)
    except ValueError:
        raise InputError(f"{what} {text!r} is not a number", line) from None
    if not math.isfinite(v):
        raise InputError(f"{what} must be finite", line)
    return v


def read_event_meta(events_path) -> EventMeta:
    p = sidecar_path(events_path)
    if not p.exists():
        return EventMeta()
    try:
        return EventMeta.from_dict(json.loads(p.read_text(encoding="utf-8")))
    except json.JSONDecodeError as exc:
        raise InputError(f"{p}: invalid JSON ({exc.msg})", exc.lineno) from None


def read_events(path, domain: Domain, T: float | None = None, meta: EventMeta | None = None):
    """Parse an event CSV (header t,x,y[,mark]) into a catalog.

    Returns (catalog, meta). ``T`` overrides the sidecar value. Every
    malformed row raises InputError naming its line.
    """
    meta = meta or read_event_meta(path)
    T = float(T) if T is not None else meta.T
    if T is None:
        raise InputError("observation window length T is not given (sidecar 'T' or --T)")
    marks = {meta.target_mark, *meta.indicator_marks}
    ts, xs, ys, ms, lines = [], [], [], [], []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InputError("empty event file", 1) from None
        if header[:3] != ["t", "x", "y"] or len(header) > 4 or (len(header) == 4 and header[3] != "mark"):
            raise InputError(f"header must be t,x,y[,mark]; got {','.join(header)}", 1)
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise InputError(f"expected {len(header)} fields, got {len(row)}", line)
            t = _float(row[0], "t", line)
            x = _float(row[1], "x", line)
            y = _float(row[2], "y", line)
            m = row[3].strip() if len(header) == 4 else meta.target_mark
            if m not in marks:
                raise InputError(f"undeclared mark {m!r}", line)
            if not 0 <= t < T:
                raise InputError(f"time {t} outside [0, {T})", line)
            lines.append(line)
            ts.append(t)
            xs.append(x)
            ys.append(y)
            ms.append(m)
    inside = domain.contains(np.array(xs), np.array(ys)) if ts else np.ones(0, dtype=bool)
    if not np.all(inside):
        k = int(np.flatnonzero(~inside)[0])
        raise InputError(f"location ({xs[k]}, {ys[k]}) outside the covariate domain", lines[k])
    cat = EventCatalog(ts, xs, ys, np.array(ms, dtype=object), domain=domain, T=T, target_mark=meta.target_mark,
                       indicator_marks=meta.indicator_marks)
    return cat, meta


def write_events(path, catalog: EventCatalog, meta: EventMeta | None = None) -> None:
    """Write t,x,y,mark rows with round-trip float formatting plus the sidecar."""
    meta = meta or EventMeta()
    meta = EventMeta(**{**meta.to_dict(), "T": catalog.T, "target_mark": catalog.marks[0],
                        "indicator_marks": list(catalog.marks[1:])})
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("t,x,y,mark\n")
        for t, x, y, c in zip(catalog.t, catalog.x, catalog.y, catalog.codes):
            fh.write(f"{float(t)!r},{float(x)!r},{float(y)!r},{catalog.marks[c]}\n")
    write_json(sidecar_path(path), meta.to_dict())


def read_grid_covariates(path) -> CovariateMap:
    """Grid CSV: '#key=value' lines for the grid, a header of covariate names,
    then one row per cell in row-major order (row 0 at origin_y)."""
    meta = {}
    names = None
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, sep, value = line[1:].partition("=")
                if not sep:
                    raise InputError("metadata lines must read '#key=value'", line_no)
                key = key.strip()
                if key not in GRID_KEYS:
                    raise InputError(f"unknown grid key {key!r}", line_no)
                meta[key] = _float(value.strip(), key, line_no)
                continue
            fields = next(csv.reader([line]))
            if names is None:
                names = [f.strip() for f in fields]
                if "intercept" in names:
                    raise InputError("the intercept is added automatically; remove that column", line_no)
                continue
            if len(fields) != len(names):
                raise InputError(f"expected {len(names)} fields, got {len(fields)}", line_no)
            rows.append([_float(f, names[k], line_no) for k, f in enumerate(fields)])
    missing = [k for k in GRID_KEYS if k not in meta]
    if missing:
        raise InputError(f"grid metadata missing: {missing}")
    for k in ("ncols", "nrows"):
        if meta[k] != int(meta[k]) or meta[k] < 1:
            raise InputError(f"{k} must be a positive integer")
    if meta["cell_dx"] <= 0 or meta["cell_dy"] <= 0:
        raise InputError("cell sizes must be positive")
    grid = GridSpec(meta["origin_x"], meta["origin_y"], meta["cell_dx"], meta["cell_dy"], int(meta["ncols"]),
                    int(meta["nrows"]))
    if names is None:
        raise InputError("missing covariate header line")
    if len(rows) != grid.ncells:
        raise InputError(f"expected {grid.ncells} cell rows, got {len(rows)}")
    values = np.array(rows, dtype=float).reshape(grid.ncells, len(names))
    return CovariateMap.from_grid(grid, values, names=names)


def write_grid_covariates(path, cov: CovariateMap) -> None:
    if cov.grid is None:
        raise ValueError("only grid covariate maps can be written as CSV")
    g = cov.grid
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for k, v in zip(GRID_KEYS, (g.origin_x, g.origin_y, g.dx, g.dy, g.ncols, g.nrows)):
            fh.write(f"#{k}={v!r}\n")
        fh.write(",".join(cov.names[1:]) + "\n")
        for row in cov.design[:, 1:]:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_geojson_covariates(path, properties=None, tolerance: float = 1e-9) -> CovariateMap:
    """Polygon features with numeric properties; tiling is checked on load."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"invalid GeoJSON ({exc.msg})", exc.lineno) from None
    feats = data.get("features") if isinstance(data, dict) else None
    if not feats:
        raise InputError("GeoJSON has no features")
    if properties is None:
        first = feats[0].get("properties") or {}
        properties = [k for k, v in first.items() if isinstance(v, (int, float)) and not isinstance(v, bool)]
    polys, values = [], []
    for k, f in enumerate(feats):
        try:
            geom = shape(f["geometry"])
        except Exception as exc:  # shapely raises several types for malformed geometry
            raise InputError(f"feature {k}: invalid geometry ({exc})") from None
        if geom.geom_type not in ("Polygon", "MultiPolygon") or not geom.is_valid:
            raise InputError(f"feature {k}: expected a valid polygon")
        props = f.get("properties") or {}
        try:
            values.append([float(props[p]) for p in properties])
        except (KeyError, TypeError, ValueError):
            raise InputError(f"feature {k}: missing or non-numeric covariate among {properties}") from None
        polys.append(geom)
    domain = Domain(shapely.union_all(polys))
    return CovariateMap.from_polygons(polys, np.array(values).reshape(len(polys), len(properties)),
                                      names=properties, domain=domain, tolerance=tolerance)


def load_covariates(path) -> CovariateMap:
    suffix = Path(path).suffix.lower()
    if suffix in (".geojson", ".json"):
        return read_geojson_covariates(path)
    if suffix == ".csv":
        return read_grid_covariates(path)
    raise InputError(f"unrecognised covariate file type {suffix!r} (use .csv or .geojson)")


def _default(obj):
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")


def write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, default=_default)
        fh.write("\n")


def read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise InputError(f"file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc.msg})", exc.lineno) from None


def natural_units(params: ModelParams, meta: EventMeta) -> dict:
    """omega in days and sigma in feet when the declared units are known."""
    out = {}
    if meta.time_unit in TIME_TO_DAYS:
        out["omega_days"] = params.omega * TIME_TO_DAYS[meta.time_unit]
    if meta.length_unit in LENGTH_TO_FEET:
        out["sigma_feet"] = math.sqrt(params.sigma2) * LENGTH_TO_FEET[meta.length_unit]
    return out


def params_from_fit(record: dict) -> ModelParams:
    try:
        return ModelParams.from_dict(record["params"])
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"fit record lacks valid parameters ({exc})") from None


def write_residual_geojson(path, rmap: ResidualMap) -> None:
    write_json(path, rmap.to_geojson())


def write_frames(outdir, series: ResidualSeries) -> list:
    """One NPY array per frame plus frames.json describing the raster."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for k, frame in enumerate(series.frames):
        p = out / f"frame_{k:04d}.npy"
        np.save(p, frame)
        paths.append(str(p))
    write_json(out / "frames.json", {**series.sidecar(), "files": [Path(p).name for p in paths]})
    return paths
