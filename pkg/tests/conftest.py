import numpy as np
import pytest

from impostor.config import RunConfig
from impostor.core import GridMap, TimeScheme
from impostor.ingest import SyntheticCitySpec, generate_synthetic_city
from impostor.offline import build_offline_models


@pytest.fixture(scope="session")
def grid():
    return GridMap(origin_lat=31.0, origin_lon=121.3, width_cells=12, height_cells=9)


@pytest.fixture(scope="session")
def scheme():
    return TimeScheme()


@pytest.fixture(scope="session")
def cfg():
    return RunConfig(origin_lat=31.0, origin_lon=121.3, width_cells=12, height_cells=9, rng_seed=7)


@pytest.fixture(scope="session")
def city(cfg):
    spec = SyntheticCitySpec(
        grid=cfg.grid, scheme=cfg.scheme, n_agents=80, n_days=8, rng_seed=7
    )
    return generate_synthetic_city(spec)


@pytest.fixture(scope="session")
def city_traces(city):
    return city[0]


@pytest.fixture(scope="session")
def city_labels(city):
    return city[1]


@pytest.fixture(scope="session")
def models(cfg, city_traces):
    return build_offline_models(city_traces, cfg)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
