import math
import os
import tempfile

# Settings are read at import time; point every backing service at throwaway locations first.
_SCRATCH = tempfile.mkdtemp(prefix="prandtl-lab-tests-")
os.environ.setdefault("DATABASE_URL", f"sqlite:///{_SCRATCH}/runs.db")
os.environ.setdefault("OUTPUT_ROOT", os.path.join(_SCRATCH, "runs"))
os.environ.setdefault("REDIS_URL", "redis://127.0.0.1:1/0")
os.environ.setdefault("CELERY_ALWAYS_EAGER", "true")

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from prandtl_lab.numerics.grid import Field, Role, build_grid  # noqa: E402


@pytest.fixture
def grid():
    return build_grid(32, 2 * math.pi, 121, 12.0)


@pytest.fixture
def hartmann_field(grid):
    _, Y = grid.mesh()
    return Field(grid, Role.U, 1.0 - np.exp(-Y))


@pytest.fixture
def output_root(tmp_path):
    return str(tmp_path / "runs")


@pytest.fixture
def hartmann_yaml():
    return """
kind: prandtl2d
variant: hartmann_damped
grid:
  n_x: 8
  n_y: 61
  y_max: 12.0
initial:
  catalog: hartmann
  ubar: 1.0
horizon: 0.05
dt: 0.01
sample_every: 1
"""


@pytest.fixture
def ee_template_yaml():
    return """
kind: ee_blowup
grid:
  n_x: 4
  n_y: 201
  y_max: 20.0
ee:
  amplitude: 7.0
  dt_max: 0.01
horizon: 5.0
sample_every: 5
"""
