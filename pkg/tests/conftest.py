import pytest

from qwlsh.core import GaussianMixture, generate_workload
from qwlsh.lsh import build_index, derive_params, open_index
from qwlsh.storage import BufferCache, CacheConfig

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def params():
    return derive_params()


@pytest.fixture(scope="session")
def small_ds():
    return GaussianMixture(32, seed=3).dataset(2000, 16, name="small")


@pytest.fixture(scope="session")
def small_index_dir(tmp_path_factory, small_ds, params):
    out = tmp_path_factory.mktemp("small_index")
    build_index(small_ds, params, seed=1, directory=out)
    return out


@pytest.fixture
def small_cache(small_index_dir, params):
    cache = BufferCache(CacheConfig(256 * 4096, 0.5), params.m)
    idx = open_index(small_index_dir, cache)
    yield idx, cache
    cache.close()


@pytest.fixture(scope="session")
def small_workload(small_ds):
    return generate_workload(small_ds, 40, 10, seed=9)


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
