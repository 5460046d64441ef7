import numpy as np
import pytest
from PIL import Image

import datagen
import evalkit
import report
import storage
from config import ConfigError
from model import IdentityTranslator
from tests.conftest import small_manifest


@pytest.fixture(scope="module")
def manifest():
    return small_manifest("A", n_a=12, n_b=12)


@pytest.fixture(scope="module")
def identity_eval(manifest):
    return evalkit.evaluate(IdentityTranslator(), manifest, seed=0)


def test_identity_scores_full_marks_on_shared_columns(identity_eval):
    table = report.format_score_table({"identity": identity_eval.aggregates()})
    header, row = [line.split() for line in table.splitlines()]
    values = dict(zip(header, row))
    assert values["OC:C"] == "100" and values["SH:C"] == "100"
    assert values["SZ:S"] == "0"
    assert values["OC:S"] == "-"


def test_columns_are_labelled_for_the_toy_attributes_only():
    assert set(report.ABBREVIATIONS) == \
        set(datagen.CANONICAL_ARITY) | set(datagen.REAL_VIEWS)
    row = {"hue": {"C": 0.5, "S": None}}
    header = report.format_score_table({"m": row}).splitlines()[0].split()
    assert header[1:3] == ["hue:C", "hue:S"]


def test_split_table_marks_roles(identity_eval):
    table = report.format_split_table([identity_eval])
    header, row = [line.split() for line in table.splitlines()]
    values = dict(zip(header, row))
    assert values["OC"] == "100(C)"
    assert values["SZ"] == "0(B)"
    assert values["BG"] == "0(A)"


def test_evaluation_files_round_trip(identity_eval, manifest, tmp_path):
    rand = evalkit.rand_baseline(manifest, n_trials=200)
    path = report.write_evaluation(identity_eval, tmp_path, rand)
    text = (tmp_path / "eval.txt").read_text()
    assert "RAND" in text and "object_color" in text
    evaluation, restored_rand = report.read_evaluation(path)
    assert evaluation.aggregates() == identity_eval.aggregates()
    assert restored_rand.scores() == rand.scores()


def test_loss_curves(tmp_path):
    metrics = tmp_path / "metrics.jsonl"
    storage.write_jsonl(metrics, [{"step": s, "cyc_A": 1.0 / s,
                                   "total_G": 2.0 / s} for s in (1, 2, 3)])
    out = report.plot_loss_curves(metrics, tmp_path / "curves.png")
    assert Image.open(out).size[0] > 0


def test_empty_metrics_name_the_file(tmp_path):
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    with pytest.raises(ConfigError, match="empty.jsonl"):
        report.read_metrics(empty)


def test_image_grid_geometry(tmp_path):
    tile = np.zeros((4, 5, 3), np.float32)
    out = report.make_image_grid([[tile, tile, tile], [tile]],
                                 tmp_path / "grid.png", scale=2, padding=1)
    assert Image.open(out).size == (3 * (10 + 1) + 1, 2 * (8 + 1) + 1)
    with pytest.raises(ValueError):
        report.make_image_grid([], tmp_path / "none.png")


def test_translation_grid(manifest, tmp_path):
    out = report.translation_grid(IdentityTranslator(), manifest,
                                  tmp_path / "grid.png", n=3)
    width, height = Image.open(out).size
    assert width == 3 * (32 * 4 + 2) + 2
    assert height == 8 * (32 * 4 + 2) + 2


def test_report_needs_inputs(tmp_path):
    with pytest.raises(ConfigError):
        report.build_report([], [], tmp_path)
