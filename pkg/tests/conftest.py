import math
from pathlib import Path

import pytest

from conformal_blowup.config import load
from conformal_blowup.experiment import context_from_artifacts, run_experiment
from conformal_blowup.model import ModelParams

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture(scope="session")
def p3():
    """N = 3 (p = 3), a = 3, perturbation on."""
    return ModelParams.conformal(3, a=3.0)


@pytest.fixture(scope="session")
def p3_off():
    return ModelParams.conformal(3, a=3.0, perturbation_on=False)


@pytest.fixture(scope="session")
def gaussian_run(tmp_path_factory):
    """The bundled Gaussian blow-up scenario, run once per session."""
    cfg = load(CONFIGS / "gaussian.toml")
    out = tmp_path_factory.mktemp("gaussian")
    res = run_experiment(cfg, out)
    cfg2, ctx = context_from_artifacts(out)
    return res, cfg2, ctx


def sqrt2():
    return math.sqrt(2.0)
