import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)))


def grad_rel_err(got, fd, scale=1e-6):
    """Elementwise relative error where entries below ``scale`` times the
    largest gradient are measured against that floor, since a central
    difference cannot resolve them past roundoff."""
    got, fd = np.asarray(got, dtype=float), np.asarray(fd, dtype=float)
    floor = scale * max(np.max(np.abs(got)), np.max(np.abs(fd)), 1e-300)
    return float(np.max(np.abs(got - fd) / np.maximum(np.maximum(np.abs(got), np.abs(fd)), floor)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_model():
    from mela.model import MelaModel, MelaSpec
    from mela.nn import MlpSpec

    spec = MelaSpec(MlpSpec((1, 5, 1)), s_pool=4, s_code=2, hidden=6)
    return MelaModel.init(spec, np.random.default_rng(3))


@pytest.fixture
def small_model():
    from mela.model import MelaModel, MelaSpec
    from mela.nn import MlpSpec

    spec = MelaSpec(MlpSpec((1, 8, 8, 1)), s_pool=16, s_code=3, hidden=10)
    return MelaModel.init(spec, np.random.default_rng(4))


# -- acceptance reporting and shared recipe runs ----------------------------------

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[number] = (bool(ok), detail)
    print(f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")


def _reproduce(figure, out, seed):
    import time

    from mela.cli import main

    t0 = time.perf_counter()
    code = main(["reproduce", figure, "--seed", str(seed), "--out", str(out), "--no-check"])
    return code, time.perf_counter() - t0


@pytest.fixture(scope="session")
def fig3_runs(tmp_path_factory):
    """``reproduce fig3 --seed 7`` twice, in separate directories."""
    runs = []
    for name in ("first", "second"):
        out = tmp_path_factory.mktemp(f"fig3_{name}")
        code, seconds = _reproduce("fig3", out, 7)
        runs.append({"dir": out, "code": code, "seconds": seconds})
    return runs


@pytest.fixture(scope="session")
def fig2_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("fig2")
    code, seconds = _reproduce("fig2", out, 0)
    return {"dir": out, "code": code, "seconds": seconds}
