"""Stage orchestration, run configuration and the run manifest.

Stages run in order and exchange plain files in the output directory::

    ingest      ingest_summary.json
    field       amenity_field.csv            (base-year stores)
    clusters    clusters.geojson, members.csv
    complexity  complexity.csv, complexity_meta.json
    panel       panel.csv
    regress     regression_table.txt, regression.csv, correlations.csv

Each stage reads only the input files and the artifacts of earlier stages,
so any stage can be re-run on its own once its upstream files exist.
Clusters are detected on the base year. By default the same seeds are
applied to every other year (``cluster_mode = frozen``), which keeps cluster
ids comparable across the panel; ``per_year`` detects each year afresh and
links ids to the base year by seed proximity.
"""

from __future__ import annotations

import configparser
import csv
import dataclasses
import hashlib
import json
import logging
import os
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from . import ingest
from .clusters import (
    ClusterParams,
    apply_frozen_map,
    attach_attributes,
    find_peaks,
    grow_clusters,
    link_to_base,
    read_clusters,
    write_geojson,
    write_members,
)
from .complexity import complexity_table
from .econometrics import (
    PanelConfig,
    build_panel,
    correlation_table,
    fit_spec,
    model_eq3,
    model_eq4,
    regression_frame,
    render_table,
)
from .econometrics.specs import EQ3_COLUMNS, EQ4_COLUMNS
from .exceptions import (
    AmenityECIError,
    ConfigError,
    EmptyPanel,
    MissingUpstream,
    RankDeficient,
    UnknownClusterId,
)
from .spatial import AmenityField, DecayParams, amenity_field

log = logging.getLogger(__name__)

OUTPUT_ENV = "AMENITY_ECI_OUTPUT_DIR"
STAGES = ("ingest", "field", "clusters", "complexity", "panel", "regress")
CORRELATION_COLUMNS = ("Temperature", "High_Year", "Rain", "Covid_period", "Complexity", "Diversity", "Total_Shops")

ARTIFACTS = {
    "ingest": ("ingest_summary.json",),
    "field": ("amenity_field.csv",),
    "clusters": ("clusters.geojson", "members.csv"),
    "complexity": ("complexity.csv", "complexity_meta.json"),
    "panel": ("panel.csv",),
    "regress": ("regression_table.txt", "regression.csv", "correlations.csv"),
}
NUMERIC_ARTIFACTS = tuple(a for stage in STAGES for a in ARTIFACTS[stage] if a != "ingest_summary.json")


def sample_config_path() -> str:
    """Path of the bundled sample config (about 1k stores per year)."""
    return os.path.join(os.path.dirname(os.path.abspath(__file__)), "data", "sample", "sample.cfg")


def _default_output():
    return os.environ.get(OUTPUT_ENV, "out")


@dataclass
class RunConfig:
    # inputs
    stores: str = "stores.csv"
    weather: str = "weather.csv"
    mobility: str = "mobility.csv"
    attributes: str = "cluster_attributes.csv"
    output_dir: str = field(default_factory=_default_output)
    # field and clusters
    gamma: float = 7.58
    cutoff_km: float = 1.5
    include_self: bool = True
    nms_radius_km: float = 0.25
    r_max_km: float = 0.70
    r_step_km: float = 0.05
    base_year: int = 0  # 0 = earliest year in the store file
    cluster_mode: str = "frozen"  # or per_year
    threads: int = 1
    # complexity
    binarization: str = "rca"
    rca_threshold: float = 1.0
    eci_method: str = "reflections"
    max_iter: int = 50
    tol: float = 1e-9
    rescale_basis: str = "year"
    category_level: int = 2
    # panel and regressions
    years: tuple = (2016, 2017, 2018, 2019, 2020, 2021)
    months: tuple = (8,)
    timeslots: tuple = ("07-24", "07-09", "09-18", "18-20", "20-24")
    mobile_year: int = 2018
    mobile_months: tuple = (7, 8, 9)
    demographics: tuple = ("total", "male", "female", "60+")
    quantile: float = 0.20
    se_type: str = "HC1"
    # synthetic inputs (synth command)
    seed: int = 0
    n_centers: int = 500
    stores_per_center: float = 100.0
    center_spread_km: float = 0.10
    n_metro: int = 230
    noise_sigma: str = "auto"
    mobile_sigma: float = 40.0

    def __post_init__(self):
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if self.cluster_mode not in ("frozen", "per_year"):
            raise ConfigError("cluster_mode must be 'frozen' or 'per_year'")
        if self.rescale_basis not in ("year", "pooled"):
            raise ConfigError("rescale_basis must be 'year' or 'pooled'")
        if self.binarization not in ("rca", "presence"):
            raise ConfigError("binarization must be 'rca' or 'presence'")
        if self.eci_method not in ("reflections", "eigen"):
            raise ConfigError("eci_method must be 'reflections' or 'eigen'")
        if self.se_type not in ("HC1", "HC0", "classical"):
            raise ConfigError("se_type must be HC1, HC0 or classical")

    def path(self, name: str) -> str:
        return os.path.join(self.output_dir, name)

    def params(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    @property
    def decay(self) -> DecayParams:
        return DecayParams(self.gamma, self.cutoff_km, self.include_self)

    @property
    def cluster_params(self) -> ClusterParams:
        return ClusterParams(self.nms_radius_km, self.r_max_km, self.r_step_km)


def _coerce(name: str, raw: str, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("1", "0", "true", "false", "yes", "no"):
                raise ValueError(raw)
            return low in ("1", "true", "yes")
        if isinstance(default, tuple):
            items = [x.strip() for x in raw.split(",") if x.strip()]
            kind = type(default[0]) if default else str
            return tuple(kind(x) for x in items)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None
    return raw


_PATH_KEYS = ("stores", "weather", "mobility", "attributes", "output_dir")


def load_config(path: str | None = None, overrides=(), **kwargs) -> RunConfig:
    """Build a :class:`RunConfig` from a flat ``key = value`` file plus
    ``key=value`` overrides (later wins). Relative paths in the file are
    resolved against the file's directory."""
    defaults = RunConfig()
    values: dict = {}
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        cp = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"), inline_comment_prefixes=("#",))
        cp.optionxform = str
        with open(path, encoding="utf-8") as fh:
            cp.read_string("[run]\n" + fh.read())
        base = os.path.dirname(os.path.abspath(path))
        for k, v in cp["run"].items():
            values[k] = v
            if k in _PATH_KEYS and not os.path.isabs(v.strip()):
                values[k] = os.path.join(base, v.strip())
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must be key=value: {item!r}")
        k, v = item.split("=", 1)
        values[k.strip()] = v
    values.update(kwargs)
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    typed = {}
    for k, v in values.items():
        typed[k] = _coerce(k, v, getattr(defaults, k)) if isinstance(v, str) else v
    return RunConfig(**typed)


def write_config(path: str, cfg: RunConfig) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for k, v in cfg.params().items():
            if isinstance(v, list):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            fh.write(f"{k} = {v}\n")


def sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# -- shared loaders --------------------------------------------------------


def _require_input(cfg: RunConfig, key: str) -> str:
    p = getattr(cfg, key)
    if not os.path.exists(p):
        raise ConfigError(f"{key} file not found: {p}")
    return p


def _require(cfg: RunConfig, stage: str):
    for name in ARTIFACTS[stage]:
        if not os.path.exists(cfg.path(name)):
            raise MissingUpstream(stage, cfg.path(name))


def _stores_by_year(cfg: RunConfig) -> dict:
    out: dict = {}
    for s in ingest.ingest_stores(_require_input(cfg, "stores")):
        out.setdefault(s.year, []).append(s)
    return out


def _base_year(cfg: RunConfig, by_year: dict) -> int:
    if cfg.base_year:
        if cfg.base_year not in by_year:
            raise ConfigError(f"base_year {cfg.base_year} not in store file")
        return cfg.base_year
    return min(by_year)


def _attributes(cfg: RunConfig):
    p = cfg.attributes
    return ingest.ingest_cluster_attributes(p) if p and os.path.exists(p) else []


def _write_csv(path: str, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r])


def _frame_to_csv(df: pd.DataFrame, path: str) -> None:
    _write_csv(path, list(df.columns), df.itertuples(index=False, name=None))


# -- stages ----------------------------------------------------------------


def stage_ingest(cfg: RunConfig, ctx: dict) -> None:
    for key in ("stores", "weather", "mobility"):
        _require_input(cfg, key)
    by_year = _stores_by_year(cfg)
    weather = ingest.ingest_weather(cfg.weather)
    mobility = ingest.ingest_mobility(cfg.mobility)
    attrs = _attributes(cfg)
    summary = {
        "stores_per_year": {str(y): len(v) for y, v in sorted(by_year.items())},
        "weather_periods": [[w.year, w.month] for w in weather],
        "mobility_records": len(mobility),
        "cluster_attributes": len(attrs),
    }
    with open(cfg.path("ingest_summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _field_years(cfg: RunConfig, by_year: dict) -> list[int]:
    return sorted(by_year) if cfg.cluster_mode == "per_year" else [_base_year(cfg, by_year)]


def stage_field(cfg: RunConfig, ctx: dict) -> None:
    _require(cfg, "ingest")
    by_year = _stores_by_year(cfg)
    rows = []
    for year in _field_years(cfg, by_year):
        f = amenity_field(by_year[year], cfg.decay, threads=cfg.threads)
        rows.extend((year, int(i), float(v)) for i, v in zip(f.store_ids, f.values))
    _write_csv(cfg.path("amenity_field.csv"), ["year", "store_id", "A"], rows)


def _read_fields(cfg: RunConfig) -> dict:
    df = pd.read_csv(cfg.path("amenity_field.csv"), float_precision="round_trip")
    return {
        int(y): AmenityField(g["store_id"].to_numpy(np.int64), g["A"].to_numpy(np.float64), cfg.decay)
        for y, g in df.groupby("year")
    }


def clusters_by_year(cfg: RunConfig, by_year: dict, fields: dict) -> dict:
    """Detect on the base year, then either apply the frozen seed map to
    other years or detect each year and link ids by seed proximity."""
    params = cfg.cluster_params
    year = _base_year(cfg, by_year)
    for y in _field_years(cfg, by_year):
        if y not in fields:
            raise MissingUpstream("field", cfg.path("amenity_field.csv"))

    def detect(y):
        return grow_clusters(find_peaks(fields[y], by_year[y], params), by_year[y], fields[y], params, year=y)

    base = detect(year)
    out = {year: base}
    for y in sorted(by_year):
        if y == year:
            continue
        if cfg.cluster_mode == "per_year":
            out[y] = link_to_base(base, detect(y), cfg.nms_radius_km)
        else:
            out[y] = apply_frozen_map(base, by_year[y], params, year=y)
    return out


def stage_clusters(cfg: RunConfig, ctx: dict) -> None:
    _require(cfg, "field")
    by_year = _stores_by_year(cfg)
    cby = clusters_by_year(cfg, by_year, _read_fields(cfg))
    base = cby[_base_year(cfg, by_year)]
    mobility = ingest.ingest_mobility(_require_input(cfg, "mobility"))
    attrs = _attributes(cfg)
    known = {c.cluster_id for c in base}
    for a in attrs:
        if a.cluster_id not in known:
            raise UnknownClusterId(a.cluster_id)
    out = []
    for y in sorted(by_year):
        cs = cby[y]
        ids = {c.cluster_id for c in cs}
        mob_y = [m for m in mobility if m.year == y]
        out.extend(attach_attributes(cs, [a for a in attrs if a.cluster_id in ids], mob_y))
    write_geojson(cfg.path("clusters.geojson"), out)
    write_members(cfg.path("members.csv"), out, [s for v in by_year.values() for s in v])


def _clusters_by_year(cfg: RunConfig) -> dict:
    out: dict = {}
    for c in read_clusters(cfg.path("clusters.geojson"), cfg.path("members.csv")):
        out.setdefault(c.year, []).append(c)
    return out


def stage_complexity(cfg: RunConfig, ctx: dict) -> None:
    _require(cfg, "clusters")
    cby = _clusters_by_year(cfg)
    by_year = _stores_by_year(cfg)
    df, meta = complexity_table(
        cby,
        by_year,
        binarization=cfg.binarization,
        threshold=cfg.rca_threshold,
        method=cfg.eci_method,
        basis=cfg.rescale_basis,
        level=cfg.category_level,
        max_iter=cfg.max_iter,
        tol=cfg.tol,
    )
    _frame_to_csv(df, cfg.path("complexity.csv"))
    with open(cfg.path("complexity_meta.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
        fh.write("\n")


PANEL_KEYS = ("mode", "timeslot", "demographic")


def stage_panel(cfg: RunConfig, ctx: dict) -> None:
    _require(cfg, "complexity")
    cby = _clusters_by_year(cfg)
    comp = pd.read_csv(cfg.path("complexity.csv"), float_precision="round_trip")
    mobility = ingest.ingest_mobility(_require_input(cfg, "mobility"))
    weather = ingest.ingest_weather(_require_input(cfg, "weather"))
    frames = []
    years = tuple(y for y in cfg.years if y in cby)
    for ts in cfg.timeslots:
        pc = PanelConfig("subway", years, cfg.months, ts, "total", cfg.quantile)
        frames.append(build_panel(cby, comp, mobility, weather, pc).assign(mode="subway", timeslot=ts, demographic="total"))
    has_cells = any(m.kind == "cell" and m.year == cfg.mobile_year for m in mobility)
    if has_cells and cfg.mobile_year in cby:
        for demo in cfg.demographics:
            pc = PanelConfig.mobile(cfg.mobile_year, cfg.mobile_months, demo, cfg.quantile)
            try:
                p = build_panel(cby, comp, mobility, weather, pc)
            except EmptyPanel as e:
                warnings.warn(f"mobile panel for {demo!r} skipped: {e}", stacklevel=2)
                continue
            frames.append(p.assign(mode="mobile", timeslot="ALL", demographic=demo))
    panel = pd.concat(frames, ignore_index=True)
    cols = list(PANEL_KEYS) + [c for c in panel.columns if c not in PANEL_KEYS]
    _frame_to_csv(panel[cols], cfg.path("panel.csv"))


def _fit_all(cfg: RunConfig, panel: pd.DataFrame):
    """(table title, [(label, result)]) for every table the panel supports."""

    def sub(mode, ts=None, demo=None):
        m = panel["mode"] == mode
        if ts is not None:
            m &= panel["timeslot"] == ts
        if demo is not None:
            m &= panel["demographic"] == demo
        return panel.loc[m]

    def fit(frame, spec, label):
        if frame.empty:
            return None
        try:
            return label, fit_spec(frame, spec)
        except RankDeficient as e:
            warnings.warn(f"{spec.name} not estimable: {e}", stacklevel=2)
            return None

    tables = []
    main = sub("subway", "07-24")
    if "07-24" in cfg.timeslots:
        tables.append(("Yearly subway model", [fit(main, model_eq3(c, "07-24", cfg.se_type), "") for c in sorted(EQ3_COLUMNS)]))
    tables.append(
        ("Yearly subway model by timeslot", [fit(sub("subway", ts), model_eq3(4, ts, cfg.se_type), ts) for ts in cfg.timeslots])
    )
    if "total" in cfg.demographics:
        tables.append(
            ("Monthly phone model", [fit(sub("mobile", demo="total"), model_eq4(c, "total", cfg.se_type), "") for c in sorted(EQ4_COLUMNS)])
        )
    tables.append(
        ("Monthly phone model by group", [fit(sub("mobile", demo=d), model_eq4(5, d, cfg.se_type), d) for d in cfg.demographics])
    )
    return [(title, [f for f in fits if f is not None]) for title, fits in tables]


def stage_regress(cfg: RunConfig, ctx: dict) -> None:
    _require(cfg, "panel")
    panel = pd.read_csv(cfg.path("panel.csv"), float_precision="round_trip", dtype={"timeslot": str, "demographic": str})
    blocks, results = [], []
    for title, fits in _fit_all(cfg, panel):
        if not fits:
            continue
        labels = [lab for lab, _ in fits]
        res = [r for _, r in fits]
        results.extend(res)
        blocks.append(render_table(res, labels if any(labels) else None, title=title))
    if not results:
        raise EmptyPanel("no regression could be fitted")
    with open(cfg.path("regression_table.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(blocks))
    _frame_to_csv(regression_frame(results), cfg.path("regression.csv"))
    main = panel[(panel["mode"] == "subway") & (panel["timeslot"] == panel["timeslot"].iloc[0])]
    corr = correlation_table(main, CORRELATION_COLUMNS)
    rows = [[r] + [("" if np.isnan(v) else float(v)) for v in corr.loc[r]] for r in corr.index]
    _write_csv(cfg.path("correlations.csv"), [""] + list(corr.columns), rows)


STAGE_FUNCS = {
    "ingest": stage_ingest,
    "field": stage_field,
    "clusters": stage_clusters,
    "complexity": stage_complexity,
    "panel": stage_panel,
    "regress": stage_regress,
}


# -- runner ----------------------------------------------------------------


class _ListHandler(logging.Handler):
    def __init__(self):
        super().__init__(logging.INFO)
        self.messages: list[str] = []

    def emit(self, record):
        self.messages.append(f"{record.name}: {record.getMessage()}")


class StageError(AmenityECIError):
    def __init__(self, stage, cause):
        super().__init__(f"stage {stage} failed: {cause}")
        self.stage = stage
        self.cause = cause


def _load_manifest(cfg: RunConfig) -> dict:
    p = cfg.path("run_manifest.json")
    if os.path.exists(p):
        with open(p, encoding="utf-8") as fh:
            return json.load(fh)
    return {}


def run_stages(cfg: RunConfig, stages=STAGES, command="run") -> dict:
    """Run ``stages`` in order and write ``run_manifest.json``.

    Raises :class:`StageError` for the first failing stage; the manifest
    is written either way.
    """
    os.makedirs(cfg.output_dir, exist_ok=True)
    manifest = _load_manifest(cfg) if command == "stage" else {}
    manifest.update({"command": command, "params": cfg.params()})
    inputs = {}
    for key in ("stores", "weather", "mobility", "attributes"):
        p = getattr(cfg, key)
        inputs[key] = {"path": p, "sha256": sha256(p) if p and os.path.exists(p) else None}
    manifest["inputs"] = inputs
    timings = manifest.setdefault("stages", {})
    caught = manifest.setdefault("warnings", {})
    handler = _ListHandler()
    root = logging.getLogger("amenity_eci")
    old_level = root.level
    root.addHandler(handler)
    root.setLevel(logging.INFO)
    error = None
    try:
        for name in stages:
            handler.messages.clear()
            t0 = time.perf_counter()
            status = "ok"
            with warnings.catch_warnings(record=True) as wlist:
                warnings.simplefilter("always")
                try:
                    STAGE_FUNCS[name](cfg, {})
                except Exception as exc:  # noqa: BLE001 - reported with the stage name
                    status = "failed"
                    error = StageError(name, exc)
            timings[name] = {"status": status, "seconds": round(time.perf_counter() - t0, 4)}
            caught[name] = [f"{w.category.__name__}: {w.message}" for w in wlist] + list(handler.messages)
            if error is not None:
                break
    finally:
        root.removeHandler(handler)
        root.setLevel(old_level)
        manifest["artifacts"] = {
            a: sha256(cfg.path(a)) for stage in STAGES for a in ARTIFACTS[stage] if os.path.exists(cfg.path(a))
        }
        manifest["exit_code"] = 0 if error is None else 1
        with open(cfg.path("run_manifest.json"), "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=1, sort_keys=True)
            fh.write("\n")
    if error is not None:
        raise error
    return manifest


def cmd_run(cfg: RunConfig) -> dict:
    return run_stages(cfg, STAGES, "run")


def cmd_stage(name: str, cfg: RunConfig) -> dict:
    if name not in STAGE_FUNCS:
        raise ConfigError(f"unknown stage {name!r}; choose from {', '.join(STAGES)}")
    return run_stages(cfg, (name,), "stage")


def cmd_synth(cfg: RunConfig, target_dir: str | None = None) -> dict:
    """Generate the four input files plus ``ground_truth.csv``.

    Mobility is planted on clusters detected with the run parameters, so a
    following ``run`` on the same config consumes the files unchanged.
    """
    from .synth import SynthConfig, gen_city, gen_mobility

    target = target_dir or cfg.output_dir
    os.makedirs(target, exist_ok=True)
    noise = cfg.noise_sigma if cfg.noise_sigma == "auto" else float(cfg.noise_sigma)
    sc = SynthConfig(
        seed=cfg.seed,
        n_centers=cfg.n_centers,
        stores_per_center=cfg.stores_per_center,
        center_spread_km=cfg.center_spread_km,
        min_separation_km=2 * cfg.nms_radius_km,
        years=tuple(cfg.years),
        n_metro=cfg.n_metro,
        noise_sigma=noise,
        mobile_sigma=cfg.mobile_sigma,
        quantile=cfg.quantile,
    )
    city = gen_city(sc)
    by_year: dict = {}
    for s in city.stores:
        by_year.setdefault(s.year, []).append(s)
    fields = {y: amenity_field(by_year[y], cfg.decay, threads=cfg.threads) for y in _field_years(cfg, by_year)}
    cby = clusters_by_year(cfg, by_year, fields)
    base = cby[_base_year(cfg, by_year)]
    comp, _ = complexity_table(
        cby, by_year, cfg.binarization, cfg.rca_threshold, cfg.eci_method, cfg.rescale_basis, cfg.category_level, cfg.max_iter, cfg.tol
    )
    records, attrs, truth = gen_mobility(sc, cby, comp)
    paths = {
        "stores": os.path.join(target, "stores.csv"),
        "weather": os.path.join(target, "weather.csv"),
        "mobility": os.path.join(target, "mobility.csv"),
        "attributes": os.path.join(target, "cluster_attributes.csv"),
        "ground_truth": os.path.join(target, "ground_truth.csv"),
    }
    ingest.write_stores(paths["stores"], city.stores)
    ingest.write_weather(paths["weather"], sc.weather)
    ingest.write_mobility(paths["mobility"], records)
    ingest.write_cluster_attributes(paths["attributes"], attrs)
    _frame_to_csv(city.truth, paths["ground_truth"])
    return {
        "paths": paths,
        "n_stores": len(city.stores),
        "n_clusters": len(base),
        "sigma": truth["sigma"],
        "n_clamped": truth["n_clamped"],
        "n_clamped_mobile": truth["n_clamped_mobile"],
    }
