"""Full synthetic comparison at the reduced desk-scale setup. Run with `pytest -m slow`."""
import hashlib
import json

import pytest

from scripts.run_acceptance import COMPARED, run_once
from src.pipeline import AcceptanceDefaults

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def acceptance(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance")
    defaults = AcceptanceDefaults()
    first = run_once(root / "run1", 0, defaults)
    run_once(root / "run2", 0, defaults)
    return root, defaults, first


def test_cnn_learns_the_signal(acceptance):
    _, defaults, summary = acceptance
    assert summary["cnn"]["ccc"] >= defaults.min_cnn_ccc


def test_rnn_improves_on_the_cnn(acceptance):
    _, defaults, summary = acceptance
    assert summary["cnn_rnn"]["ccc"] - summary["cnn"]["ccc"] >= defaults.min_ccc_gain
    assert summary["cnn_rnn"]["first_diff_var"] <= summary["cnn"]["first_diff_var"]


def test_reruns_are_identical(acceptance):
    root, _, summary = acceptance
    for name in COMPARED:
        a = hashlib.sha256((root / "run1" / "out" / name).read_bytes()).hexdigest()
        b = hashlib.sha256((root / "run2" / "out" / name).read_bytes()).hexdigest()
        assert a == b, name
    assert json.loads((root / "run2" / "out" / "eval_summary.json").read_text()) == summary
