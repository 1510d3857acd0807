import sys
from pathlib import Path

import numpy as np
import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

torch.set_num_threads(1)

GOLDEN = Path(__file__).parent / "golden"

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion check")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    num, title = mark.args
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        prev = _criteria.get(num, (title, "PASS"))
        status = "PASS" if rep.outcome == "passed" and prev[1] == "PASS" else "FAIL"
        _criteria[num] = (title, status)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_criteria):
        title, status = _criteria[num]
        terminalreporter.write_line(f"[{status}] criterion {num:2d}: {title}")


@pytest.fixture
def golden():
    data = np.load(GOLDEN / "tiny_eit.npz")
    return {k: data[k] for k in data.files}


@pytest.fixture
def tiny_config():
    from affectshift.model import EITConfig

    return EITConfig(num_blocks=2, d_model=8, d_prompt=16, seq_len=4, emo_tokens=1,
                     num_heads=2, d_ffn=32, mlp_hidden=16, ln_epsilon=1e-5)


@pytest.fixture
def golden_model(golden, tiny_config):
    from affectshift.model import EmotionInjectionTransformer

    model = EmotionInjectionTransformer(tiny_config)
    state = {k[len("param/"):]: torch.from_numpy(v) for k, v in golden.items() if k.startswith("param/")}
    model.load_state_dict(state)
    return model.eval()
