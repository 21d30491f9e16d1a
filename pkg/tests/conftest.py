import numpy as np
import pytest

from mxspot import autodiff as ad
from mxspot.charset import ScriptId, build_charsets
from mxspot.model import ModelConfig, build_model
from mxspot.scenegen import DatasetManifest, WordSampler, corpus, generate_scene

TINY_HEADS = {s.name: (6, 8) for s in ScriptId}


@pytest.fixture
def f64():
    with ad.precision(np.float64):
        yield


@pytest.fixture(scope="session")
def tiny_manifest():
    w = {s.name: 1.0 for s in ScriptId}
    w["Latin"] = 4.0
    return DatasetManifest(root="", seed=3, train=12, test=4, image_size=64, scales=(2,), max_words=3,
                           max_len=3, weights=w)


@pytest.fixture(scope="session")
def tiny_data(tiny_manifest):
    sampler = WordSampler(tiny_manifest)
    train = [generate_scene(tiny_manifest, [tiny_manifest.seed, 0, i], sampler) for i in range(tiny_manifest.train)]
    test = [generate_scene(tiny_manifest, [tiny_manifest.seed, 1, i], sampler) for i in range(tiny_manifest.test)]
    return train, test


@pytest.fixture(scope="session")
def tiny_charsets(tiny_data):
    return build_charsets(corpus(tiny_data[0]))


@pytest.fixture
def tiny_cfg():
    return ModelConfig(image_size=64, channels=8, pooled=6, widths=(4, 4, 8), lpn_conv1=4, lpn_conv2=4,
                       lpn_fc=8, head_sizes=dict(TINY_HEADS), t_max=6, min_component=2)


@pytest.fixture
def tiny_model(tiny_cfg, tiny_charsets):
    return build_model(tiny_cfg, tiny_charsets)


ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
