import numpy as np
import pytest

from ssm2d import presets
from ssm2d.jets import JetMode, NumericMode
from ssm2d.model import normalize_model
from ssm2d.spectral import analyze
from ssm2d.expansion import expand


@pytest.fixture(scope="session")
def duffing():
    """Normalized reference model with its spectral data."""
    model = presets.duffing_pair()
    norm, scale = normalize_model(model)
    spec = analyze(norm)
    return {"raw": model, "model": norm, "scale": scale, "spec": spec}


@pytest.fixture(scope="session")
def linear():
    model = presets.linear_pair()
    norm, scale = normalize_model(model)
    spec = analyze(norm)
    return {"raw": model, "model": norm, "scale": scale, "spec": spec}


@pytest.fixture(scope="session")
def coupled():
    model = presets.coupled_pair()
    norm, scale = normalize_model(model)
    spec = analyze(norm)
    return {"raw": model, "model": norm, "scale": scale, "spec": spec}


@pytest.fixture(scope="session")
def expansions(duffing):
    """Cache of reference-model expansions keyed by (order, mode)."""
    cache = {}

    def get(order, eps=None, jet=False, degree=1):
        key = (order, "jet", degree) if jet else (order, "num", eps)
        if key not in cache:
            mode = JetMode(degree) if jet else NumericMode(eps)
            cache[key] = expand(duffing["model"], duffing["spec"], order, mode)
        return cache[key]

    return get


@pytest.fixture(scope="session")
def model_files(tmp_path_factory):
    d = tmp_path_factory.mktemp("models")
    paths = {}
    for name, data in [("duffing_pair", presets.duffing_pair_dict()),
                       ("linear_pair", presets.linear_pair_dict()),
                       ("coupled_pair", presets.coupled_pair_dict())]:
        p = d / f"{name}.json"
        presets.write_model(p, data)
        paths[name] = str(p)
    return paths


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
