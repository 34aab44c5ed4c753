import numpy as np
import pytest
from threadpoolctl import threadpool_limits

from omnialign.config import RunConfig, config_from_dict

# Bit-exact comparisons assume single-threaded BLAS.
threadpool_limits(1)

SMALL_MODEL = {"width": 16, "encoder_depth": 1, "encoder_heads": 2, "num_modality_tokens": 2, "num_experts": 3,
               "expert_depth": 1, "expert_heads": 2, "lm_width": 16, "lm_depth": 1, "lm_heads": 2}


def small_run_config(steps: int = 20, model: dict | None = None, **sections) -> RunConfig:
    """Default renderers with a narrow, shallow model and short schedules."""
    raw = {
        "model": {**SMALL_MODEL, **(model or {})},
        "data": {"seed": 11, "train_size": 32, "eval_size": 8},
        "stages": {name: {"steps": steps, "warmup": 2, "batch_size": 4}
                   for name in ("lm_pretrain", "I", "II", "III", "instruct")},
        "ablation": {"stage_steps": 3, "instruct_steps": 3, "eval_size": 4},
        "eval": {"max_new": 12},
        "io": {"log_every": 5},
    }
    for key, value in sections.items():
        raw[key] = {**raw.get(key, {}), **value}
    return config_from_dict(raw)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_cfg():
    return small_run_config()


# -- acceptance summary ---------------------------------------------------------------------
# Tests marked ``criterion(n, title)`` report one line each at the end of the session.

_CRITERIA: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when != "call" and report.passed:
        return
    number, title = marker.args
    detail = "; ".join(f"{k}={v}" for k, v in item.user_properties)
    if report.when == "call" or report.failed:
        _CRITERIA[number] = ("PASS" if report.passed else "FAIL", title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        status, title, detail = _CRITERIA[number]
        line = f"criterion {number:2d} {status}  {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
