"""Scenario orchestration: config parsing, hashing, per-kind execution,
output publication and run bookkeeping."""
import hashlib
import json
import logging
import tempfile
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import yaml
from pydantic import ValidationError
from sqlalchemy.orm import Session

from prandtl_lab.core.config import settings
from prandtl_lab.core.errors import ConfigError, LabError, ParameterError
from prandtl_lab.database import SessionLocal, init_db
from prandtl_lab.models import RunRow
from prandtl_lab.numerics import crocco, diagnostics, solver2d, solver3d
from prandtl_lab.numerics.grid import NormalAxis
from prandtl_lab.numerics.norms import DEFAULT_M_MAX, norm_report
from prandtl_lab.numerics.self_similar import DEFAULT_ETA_INF, blasius_solve, powerlaw_mhd_solve
from prandtl_lab.schemas import (
    BlowupVerdict,
    NormReport,
    RunRecord,
    ScenarioConfig,
    SelfSimilarSummary,
    VerdictStatus,
    WeightParams,
)
from prandtl_lab.services import cache, storage

logger = logging.getLogger(__name__)

# relative t* agreement required between a run and its 2x-refined twin
REFINE_TOLERANCE = 0.1


# ----------------- CONFIG -----------------
def _dotted(loc: Sequence[Any]) -> str:
    return ".".join(str(p) for p in loc) or "<root>"


def parse_config(text: str) -> ScenarioConfig:
    """YAML text to a validated ScenarioConfig; every violation is reported at once."""
    try:
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as e:
        mark = e.problem_mark or e.context_mark
        line = mark.line + 1 if mark else None
        column = mark.column + 1 if mark else None
        raise ConfigError([f"syntax: {e.problem or e}"], line=line, column=column) from e
    except yaml.YAMLError as e:
        raise ConfigError([f"syntax: {e}"]) from e
    if not isinstance(data, dict):
        raise ConfigError(["<root>: config must be a mapping"])
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError([f"{_dotted(err['loc'])}: {err['msg']}" for err in e.errors()]) from e


def load_config(path: str) -> ScenarioConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def config_hash(config: ScenarioConfig) -> str:
    """sha256 over the canonical JSON form; equal for semantically identical configs."""
    canonical = json.dumps(config.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def with_parameter(config: ScenarioConfig, parameter: str, value: Any) -> ScenarioConfig:
    """Copy of ``config`` with the dotted key set to ``value``, revalidated."""
    data = config.model_dump(mode="json")
    node = data
    keys = parameter.split(".")
    for key in keys[:-1]:
        if not isinstance(node.get(key), dict):
            node[key] = {}
        node = node[key]
    node[keys[-1]] = value
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError([f"{_dotted(err['loc'])}: {err['msg']}" for err in e.errors()]) from e


def _output_root(output_root: Optional[str]) -> Path:
    root = Path(output_root or settings.OUTPUT_ROOT)
    root.mkdir(parents=True, exist_ok=True)
    return root


# ----------------- PER-KIND EXECUTION -----------------
def _run_prandtl2d(config: ScenarioConfig, staging: Path) -> List[BlowupVerdict]:
    initial = None
    if config.initial.catalog == "snapshot":
        initial, _ = storage.read_snapshot(config.initial.snapshot)
    traj = solver2d.run(config, initial)
    storage.emit_csv(traj.series, staging / "series.csv")
    storage.write_snapshot(traj.final.u, staging / "snapshot.csv", t=traj.final.t)
    if config.norms:
        storage.write_json(staging / "norms.json", [r.model_dump(mode="json") for r in traj.norm_reports])
    return [traj.verdict]


def _ee_initial(config: ScenarioConfig, n_y: int) -> Tuple[np.ndarray, NormalAxis]:
    normal = NormalAxis(n_y, config.grid.y_max, config.grid.y_stretch)
    y = normal.nodes
    return config.ee.amplitude * y * np.exp(-y), normal


def _ee_once(config: ScenarioConfig, n_y: int) -> diagnostics.EERun:
    a0, normal = _ee_initial(config, n_y)
    return diagnostics.ee_run(
        a0,
        normal,
        config.horizon,
        dt_max=config.ee.dt_max,
        blowup_factor=config.detectors.blowup_factor,
        energy_variant=config.ee.energy_variant,
        sample_every=config.sample_every,
    )


def _run_ee(config: ScenarioConfig, staging: Path) -> List[BlowupVerdict]:
    result = _ee_once(config, config.grid.n_y)
    verdict = result.verdict
    if config.detectors.refine_confirm and verdict.status is VerdictStatus.BLOWUP:
        fine = _ee_once(config, 2 * (config.grid.n_y - 1) + 1).verdict
        agree = fine.status is VerdictStatus.BLOWUP and abs(fine.t_star - verdict.t_star) <= REFINE_TOLERANCE * verdict.t_star
        verdict = verdict.model_copy(update={"confirmed": bool(agree), "detail": f"refined t* = {fine.t_star}"})
    rows = [{"t": t, "sup": s, "energy": e} for t, s, e in zip(result.t, result.sup, result.energy)]
    storage.emit_csv(rows, staging / "series.csv", columns=["t", "sup", "energy"])
    y = _ee_initial(config, config.grid.n_y)[1].nodes
    storage.emit_csv([{"y": a, "a": b} for a, b in zip(y, result.final)], staging / "profile.csv", columns=["y", "a"])
    return [verdict]


def _run_crocco(config: ScenarioConfig, staging: Path) -> List[BlowupVerdict]:
    spec = config.crocco
    c = crocco.scenario_state(spec)
    n_steps = max(1, int(round(config.horizon / spec.h)))
    h = config.horizon / n_steps
    rows = [{"tau": c.tau, "w_wall_min": float(np.min(c.w[:, 0])), "w_max": float(np.max(c.w))}]
    verdict = BlowupVerdict(status=VerdictStatus.COMPLETED_HORIZON)
    done = 0
    try:
        while done < n_steps:
            chunk = min(config.sample_every, n_steps - done)
            c = crocco.march(c, spec.scheme, h, chunk, spec.M, spec.bound_w, spec.bound_speed)
            done += chunk
            rows.append({"tau": c.tau, "w_wall_min": float(np.min(c.w[:, 0])), "w_max": float(np.max(c.w))})
    except LabError as e:
        # gate and breakdown errors end the march; the partial series is kept
        logger.warning("crocco march stopped at tau=%.5g: %s", c.tau, e)
        verdict = BlowupVerdict(status=VerdictStatus.SCHEME_BREAKDOWN, t_star=c.tau + h, detail=str(e))
    storage.emit_csv(rows, staging / "series.csv", columns=["tau", "w_wall_min", "w_max"])
    storage.write_crocco(c, staging / "crocco.csv")
    return [verdict]


def _run_structure3d(config: ScenarioConfig, staging: Path) -> List[BlowupVerdict]:
    result = solver3d.run_structure(config)
    rows = [{"t": t, "defect": d, "band": result.band} for t, d in result.defect]
    storage.emit_csv(rows, staging / "series.csv", columns=["t", "defect", "band"])
    storage.write_snapshot3d(result.samples[-1], staging / "snapshot3d")
    return [result.verdict]


_EXECUTORS = {
    "prandtl2d": _run_prandtl2d,
    "ee_blowup": _run_ee,
    "crocco": _run_crocco,
    "structure3d": _run_structure3d,
}


# ----------------- BOOKKEEPING -----------------
def _record_run(record: RunRecord) -> None:
    db = SessionLocal()
    try:
        init_db()
        row = db.get(RunRow, record.config_hash)
        if row is None:
            row = RunRow(config_hash=record.config_hash)
            db.add(row)
        row.kind = record.kind
        row.status = record.status
        row.started_at = record.started_at
        row.finished_at = record.finished_at
        row.verdicts = [v.model_dump(mode="json") for v in record.verdicts]
        row.output_paths = list(record.output_paths)
        row.software_version = record.software_version
        row.error = record.error
        db.commit()
    except Exception as e:
        logger.warning("run %s: bookkeeping failed: %s", record.config_hash[:12], e)
        db.rollback()
    finally:
        db.close()


def get_run(config_hash: str, output_root: Optional[str] = None, db: Optional[Session] = None) -> Optional[RunRecord]:
    """Cache, then the runs table, then the run.json on disk. A caller-owned
    session ``db`` is used as is and left open."""
    cached = cache.get_cached_run(config_hash)
    if cached:
        return RunRecord.model_validate(cached)
    session = db if db is not None else SessionLocal()
    try:
        init_db()
        row = session.get(RunRow, config_hash)
        if row is not None:
            return RunRecord.model_validate(row)
    except Exception as e:
        logger.warning("get_run(%s): database error: %s", config_hash[:12], e)
    finally:
        if db is None:
            session.close()
    path = Path(output_root or settings.OUTPUT_ROOT) / config_hash / "run.json"
    if path.exists():
        return RunRecord.model_validate_json(path.read_text(encoding="utf-8"))
    return None


# ----------------- RUNS -----------------
def run_scenario(config: ScenarioConfig, output_root: Optional[str] = None) -> RunRecord:
    """
    Execute the module run selected by ``config.kind``. Outputs are written to
    a staging directory and published as ``<root>/<config hash>/`` once the
    run metadata is complete. Module errors end up in the record.
    """
    digest = config_hash(config)
    root = _output_root(output_root)
    target = root / digest
    staging = Path(tempfile.mkdtemp(prefix=f".{digest[:12]}-", dir=root))
    started = datetime.now(timezone.utc)
    status, error, verdicts = "completed", None, []
    logger.info("run %s: kind=%s variant=%s horizon=%g", digest[:12], config.kind, config.variant, config.horizon)
    try:
        verdicts = _EXECUTORS[config.kind](config, staging)
    except LabError as e:
        logger.warning("run %s failed: %s", digest[:12], e)
        status, error = "failed", f"{type(e).__name__}: {e}"
    except Exception as e:
        logger.exception("run %s: unexpected failure", digest[:12])
        status, error = "failed", f"{type(e).__name__}: {e}"

    (staging / "config.yaml").write_text(yaml.safe_dump(config.model_dump(mode="json"), sort_keys=True), encoding="utf-8")
    names = sorted(p.name for p in staging.iterdir()) + ["run.json"]
    record = RunRecord(
        config_hash=digest,
        kind=config.kind,
        status=status,
        started_at=started,
        finished_at=datetime.now(timezone.utc),
        verdicts=verdicts,
        output_paths=[str(target / name) for name in names],
        software_version=settings.VERSION,
        error=error,
    )
    storage.write_json(staging / "run.json", record.model_dump(mode="json"))
    storage.publish_directory(staging, target)

    _record_run(record)
    cache.set_cached_run(digest, record.model_dump(mode="json"))
    if verdicts:
        logger.info("run %s: %s", digest[:12], verdicts[-1].status.value)
    return record


def converge(config: ScenarioConfig, levels: int = 3, output_root: Optional[str] = None) -> Tuple[Path, List[Dict[str, Any]]]:
    """Refinement table for ``config``: crocco configs use convergence_study,
    prandtl2d configs the shear oracle or the manufactured solution. Written to
    ``<root>/converge/<config hash>/convergence_L<levels>.csv``."""
    if levels < 3:
        raise ParameterError(f"converge needs at least 3 levels, got {levels}")
    if config.kind == "crocco":
        table = crocco.convergence_study(config.crocco.scheme, config.crocco, levels=levels, horizon=config.horizon)
        rows = table.rows
    elif config.kind == "prandtl2d" and config.study == "mms":
        rows = solver2d.mms_study(levels, base_n_x=config.grid.n_x, base_n_y=config.grid.n_y, y_max=config.grid.y_max, t_end=config.horizon)
        for row in rows:
            row["h"] = row["dy"]
    elif config.kind == "prandtl2d":
        rows = solver2d.shear_refinement_study(levels, base_n_y=config.grid.n_y, y_max=config.grid.y_max, t_end=config.horizon)
        for row in rows:
            row["h"] = row["dy"]
    else:
        raise ParameterError(f"no refinement study for kind {config.kind!r}")
    # outside the run directory, which publish_directory replaces wholesale
    path = _output_root(output_root) / "converge" / config_hash(config) / f"convergence_L{levels}.csv"
    storage.emit_csv([{"h": r["h"], "error": r["error"], "order": r["order"]} for r in rows], path, columns=["h", "error", "order"])
    logger.info("converge: %d levels written to %s", levels, path)
    return path, rows


SCAN_COLUMNS = ["parameter", "value", "status", "t_star", "confirmed", "config_hash", "error"]


def blowup_scan(
    template: ScenarioConfig,
    parameter: str,
    values: Sequence[Any],
    output_root: Optional[str] = None,
) -> Tuple[Path, List[Dict[str, Any]]]:
    """One independent run per distinct value, submitted to the task queue;
    a failing row records its error and the scan continues."""
    from prandtl_lab.services.tasks import scan_row_task

    unique: List[Any] = []
    for v in values:
        if v not in unique:
            unique.append(v)

    rows: List[Dict[str, Any]] = []
    pending = []
    for v in unique:
        try:
            config = with_parameter(template, parameter, v)
        except ConfigError as e:
            rows.append({"parameter": parameter, "value": v, "status": "failed", "error": "; ".join(e.violations)})
            continue
        pending.append((v, scan_row_task.apply_async(args=[config.model_dump(mode="json"), parameter, v, output_root])))
    for v, result in pending:
        try:
            rows.append(result.get())
        except Exception as e:
            logger.warning("scan row %s=%r lost: %s", parameter, v, e)
            rows.append({"parameter": parameter, "value": v, "status": "failed", "error": str(e)})
    order = {repr(v): k for k, v in enumerate(unique)}
    rows.sort(key=lambda r: order.get(repr(r["value"]), len(order)))

    path = _output_root(output_root) / f"scan-{config_hash(template)[:12]}-{parameter}.csv"
    storage.emit_csv(rows, path, columns=SCAN_COLUMNS)
    logger.info("blowup scan over %s: %d rows", parameter, len(rows))
    return path, rows


# ----------------- NORMS AND SELF-SIMILAR -----------------
def parse_weight_params(items: Sequence[str]) -> List[WeightParams]:
    """``s=1,gamma=1.5`` strings to WeightParams."""
    out = []
    for item in items:
        data: Dict[str, Any] = {}
        for pair in filter(None, item.split(",")):
            if "=" not in pair:
                raise ConfigError([f"params: expected key=value, got {pair!r}"])
            key, value = pair.split("=", 1)
            data[key.strip()] = value.strip()
        try:
            out.append(WeightParams.model_validate(data))
        except ValidationError as e:
            raise ConfigError([f"params.{_dotted(err['loc'])}: {err['msg']}" for err in e.errors()]) from e
    return out or [WeightParams()]


def snapshot_norms(path: str, params: Sequence[WeightParams], m_max: int = DEFAULT_M_MAX) -> NormReport:
    field, t = storage.read_snapshot(path)
    return norm_report(field, params, t=t, m_max=m_max)


def selfsimilar_summary(
    n: float = 1.0,
    beta: float = 0.0,
    N_param: float = 0.0,
    eta_inf: float = DEFAULT_ETA_INF,
    with_table: bool = False,
) -> SelfSimilarSummary:
    key = cache.selfsimilar_key(n, beta, N_param, eta_inf)
    cached = cache.get_cached_selfsimilar(key)
    if cached and (cached.get("table") is not None or not with_table):
        return SelfSimilarSummary.model_validate(cached)

    blasius = n == 1.0 and beta == 0.0 and N_param == 0.0
    sol = blasius_solve(eta_inf) if blasius else powerlaw_mhd_solve(n, beta, N_param, eta_inf)
    summary = SelfSimilarSummary(
        equation="blasius" if blasius else f"powerlaw n={n:g} beta={beta:g} N={N_param:g}",
        wall_shear=sol.wall_shear,
        wall_shear_classical=sol.wall_shear_classical,
        eta_inf=sol.eta_inf,
        far_field_error=sol.far_field_error,
        residual=sol.residual,
        floor_hits=sol.floor_hits,
        table=[tuple(map(float, r)) for r in sol.table()] if with_table else None,
    )
    cache.set_cached_selfsimilar(key, summary.model_dump(mode="json"))
    return summary

