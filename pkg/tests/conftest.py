import numpy as np
import pytest

from tcblstm.data import SyntheticSpec, extract_windows, generate_synthetic
from tcblstm.layers import TimeConvSpec
from tcblstm.model import ModelConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_data():
    spec = SyntheticSpec(utterance_length=60, train_utterances=12, dev_utterances=4, test_utterances=2, seed=3)
    return generate_synthetic(spec)


@pytest.fixture(scope="session")
def small_windows(small_data):
    return extract_windows(small_data.train, 7), extract_windows(small_data.dev, 7)


def small_config(variant="tc_dnn_blstm_dnn", **kw):
    base = dict(
        variant=variant,
        feat_dim=16,
        num_classes=4,
        input_dnn_layers=(8,),
        cell_dim=6,
        output_dnn_layers=(8,),
        tc=TimeConvSpec(7, 3),
        dnn_init_std=0.1,
        lstm_init_range=0.1,
    )
    if variant == "dnn":
        base["output_dnn_layers"] = ()
    elif variant == "blstm":
        base["input_dnn_layers"] = ()
        base["output_dnn_layers"] = ()
    elif variant == "dnn_blstm":
        base["output_dnn_layers"] = ()
    elif variant == "blstm_dnn":
        base["input_dnn_layers"] = ()
    base.update(kw)
    return ModelConfig(**base).validate()


# acceptance criteria report: test_acceptance records one line per criterion
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])
