"""On-disk formats. Every write goes to a temporary file in the target
directory and is moved into place with os.replace.

Matrix files (Field snapshots, CroccoState) start with one comment line
holding the metadata values in a fixed order, followed by the CSV rows:

    # role,n_x,n_y,x_period,y_max,y_stretch,t      (Field snapshot)
    # crocco,n_xi,n_eta,X,nu,tau                   (CroccoState, literal tag)
"""
import io
import json
import logging
import os
import shutil
import tempfile
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union

import numpy as np

from prandtl_lab.core.errors import ParameterError
from prandtl_lab.numerics.crocco import CroccoState
from prandtl_lab.numerics.grid import Field, Role, build_grid
from prandtl_lab.numerics.solver3d import FullState3D

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

SNAPSHOT_FIELDS = ("role", "n_x", "n_y", "x_period", "y_max", "y_stretch", "t")
CROCCO_FIELDS = ("crocco", "n_xi", "n_eta", "X", "nu", "tau")
CROCCO_TAG = "crocco"


def atomic_write_text(path: PathLike, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def publish_directory(staging: PathLike, target: PathLike) -> Path:
    """Move a fully written staging directory onto ``target``."""
    staging, target = Path(staging), Path(target)
    if target.exists():
        shutil.rmtree(target)
    os.replace(staging, target)
    return target


def _fmt(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _matrix_text(values: np.ndarray) -> str:
    buf = io.StringIO()
    np.savetxt(buf, np.atleast_2d(values), delimiter=",", fmt="%.17g")
    return buf.getvalue()


def emit_csv(series: Sequence[Dict[str, Any]], path: PathLike, columns: Optional[Sequence[str]] = None) -> Path:
    """Header row plus one row per sample; floats written with repr (round-trip exact, '.' decimal)."""
    if columns is None:
        columns = []
        for row in series:
            for key in row:
                if key not in columns:
                    columns.append(key)
        if not columns:
            columns = ["t"]
    lines = [",".join(columns)]
    for row in series:
        lines.append(",".join(_fmt(row.get(c)) for c in columns))
    return atomic_write_text(path, "\n".join(lines) + "\n")


def read_csv(path: PathLike) -> List[Dict[str, str]]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        return []
    columns = lines[0].split(",")
    return [dict(zip(columns, line.split(","))) for line in lines[1:] if line]


def write_json(path: PathLike, payload: Any) -> Path:
    return atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True, default=str) + "\n")


def write_snapshot(field: Field, path: PathLike, t: float = 0.0) -> Path:
    g = field.grid
    meta = ",".join([field.role.value, str(g.n_x), str(g.n_y), repr(g.x_period), repr(g.y_max), repr(g.y_stretch), repr(float(t))])
    return atomic_write_text(path, f"# {meta}\n" + _matrix_text(field.values))


def _meta_line(path: Path, fields: Sequence[str]) -> List[str]:
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().strip()
    values = [p.strip() for p in first[1:].split(",")] if first.startswith("#") else []
    if len(values) != len(fields):
        header = ",".join(fields)
        raise ParameterError(f"{path} does not start with a '# {header}' line")
    return values


def read_snapshot(path: PathLike):
    """Field and time stored by write_snapshot."""
    path = Path(path)
    role, n_x, n_y, x_period, y_max, y_stretch, t = _meta_line(path, SNAPSHOT_FIELDS)
    grid = build_grid(int(n_x), float(x_period), int(n_y), float(y_max), float(y_stretch))
    values = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    return Field(grid, Role(role), values), float(t)


def write_crocco(state: CroccoState, path: PathLike) -> Path:
    meta = ",".join([CROCCO_TAG, str(state.n_xi), str(state.n_eta), repr(state.X), repr(state.nu), repr(float(state.tau))])
    return atomic_write_text(path, f"# {meta}\n" + _matrix_text(state.w))


def read_crocco(path: PathLike) -> CroccoState:
    path = Path(path)
    tag, n_xi, n_eta, X, nu, tau = _meta_line(path, CROCCO_FIELDS)
    if tag != CROCCO_TAG:
        raise ParameterError(f"{path}: expected a {CROCCO_TAG!r} line, found {tag!r}")
    w = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    if w.shape != (int(n_xi), int(n_eta)):
        raise ParameterError(f"{path}: data shaped {w.shape}, header says ({n_xi}, {n_eta})")
    return CroccoState(w=w, X=float(X), nu=float(nu), tau=float(tau))


def write_snapshot3d(state: FullState3D, directory: PathLike) -> Path:
    """One CSV matrix over (x, y) per z slice and field, plus manifest.json."""
    directory = Path(directory)
    directory.parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=f".{directory.name}.", dir=directory.parent))
    g = state.grid
    files: Dict[str, List[str]] = {"u": [], "v": []}
    for name in files:
        values = getattr(state, name)
        for k in range(g.n_z):
            fname = f"{name}_z{k:03d}.csv"
            (staging / fname).write_text(_matrix_text(values[:, :, k]), encoding="utf-8")
            files[name].append(fname)
    np.savetxt(staging / "K.csv", state.K.values, delimiter=",", fmt="%.17g")
    manifest = {
        "t": state.t,
        "grid": {
            "n_x": g.n_x, "x_period": g.x_period, "n_y": g.n_y, "y_period": g.y_period,
            "n_z": g.n_z, "z_max": g.z_max, "z_stretch": g.z_stretch,
        },
        "z": g.z.tolist(),
        "K_provenance": state.K.provenance.value,
        "K_residual": state.K.residual,
        "slices": files,
    }
    (staging / "manifest.json").write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    return publish_directory(staging, directory)


def read_manifest(directory: PathLike) -> Dict[str, Any]:
    return json.loads((Path(directory) / "manifest.json").read_text(encoding="utf-8"))


def read_slices(directory: PathLike, name: str = "u") -> np.ndarray:
    manifest = read_manifest(directory)
    slices = [np.loadtxt(Path(directory) / f, delimiter=",", ndmin=2) for f in manifest["slices"][name]]
    return np.stack(slices, axis=2)


def list_outputs(directory: PathLike) -> Iterable[str]:
    return sorted(p.name for p in Path(directory).iterdir())
