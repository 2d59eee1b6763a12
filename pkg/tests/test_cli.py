import csv
import json

import numpy as np
import pytest

from glyphfusion.cli import main
from glyphfusion.io import read_image, read_pgm

SMOKE = """
seed = 7
text = A
style_image_count = 8
epochs = 2
batch_size = 4
lr_generator = 5e-4
codec_epochs = 1
codec_renders = 64
base_steps = 5
sampler_steps = 5
n_candidates = 3
classifier_epochs = 1
"""


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.fixture(scope="module")
def smoke_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("smoke")
    cfg = root / "smoke.cfg"
    cfg.write_text(SMOKE)
    out = root / "run"
    for command in ("train-codec", "train", "sample", "rank", "eval"):
        assert main([command, "--config", str(cfg), "--out", str(out)]) == 0, command
    return cfg, out


def test_render_glyph(tmp_path, capsys):
    code, out, _ = run(capsys, "render-glyph", "--text", "AB", "--size", "32", "--color", "1,0,0",
                       "--output", tmp_path / "ab.png", "--mask", tmp_path / "ab.pgm")
    assert code == 0
    assert json.loads(out)["image"].endswith("ab.png")
    img = read_image(tmp_path / "ab.png")
    assert img.shape == (3, 32, 32)  # the whole text is fitted into one square
    mask = read_pgm(tmp_path / "ab.pgm") > 127
    ink = img[:, mask].mean(axis=1)
    assert mask.any() and ink[0] > 0.95 and ink[1] < 0.3 and ink[2] < 0.3


def test_unknown_flag_is_usage_error(capsys):
    with pytest.raises(SystemExit) as err:
        main(["render-glyph", "--text", "A", "--output", "x.png", "--bogus"])
    assert err.value.code == 2


def test_bad_color_is_usage_error(capsys):
    with pytest.raises(SystemExit) as err:
        main(["render-glyph", "--text", "A", "--output", "x.png", "--color", "2,0,0"])
    assert err.value.code == 2


def test_missing_glyph_reports_json(tmp_path, capsys):
    code, out, err = run(capsys, "render-glyph", "--text", "a", "--output", tmp_path / "a.png")
    assert code == 1 and out == ""
    payload = json.loads(err.strip().splitlines()[-1])
    assert payload["error"] == "GlyphMissingError"


def test_missing_config_reports_key(tmp_path, capsys):
    code, _, err = run(capsys, "train-codec", "--config", tmp_path / "nope.cfg")
    payload = json.loads(err.strip().splitlines()[-1])
    assert code == 1 and payload["key"] == "config"


def test_bad_config_value_reports_key(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("lambda = -2\n")
    code, _, err = run(capsys, "train", "--config", cfg)
    payload = json.loads(err.strip().splitlines()[-1])
    assert code == 1 and payload == {"error": "ConfigurationError", "key": "lambda",
                                     "message": "lambda must be >= 0"}


def test_train_without_codec(tmp_path, capsys):
    code, _, err = run(capsys, "train", "--out", tmp_path / "empty")
    assert code == 1 and "train-codec" in json.loads(err.strip().splitlines()[-1])["message"]


def test_compose(tmp_path, capsys):
    run(capsys, "render-glyph", "--text", "O", "--color", "0,0.4,0.9", "--output", tmp_path / "o.png")
    code, _, _ = run(capsys, "compose", "--image", tmp_path / "o.png", "--word", "GO",
                     "--position", "1", "--output", tmp_path / "go.png")
    assert code == 0
    assert read_image(tmp_path / "go.png").shape == (3, 64, 128)


def test_smoke_artifacts(smoke_run):
    _, out = smoke_run
    for name in ("codec.dsfc", "base.dsfp", "bundle.dsfb", "classifier.dsfk", "run.cfg",
                 "codec_loss.csv", "base_loss.csv", "loss.csv", "loss.png", "contact.png",
                 "rank.csv", "ranked_contact.png", "rank_scatter.png", "eval.csv",
                 "samples/manifest.csv"):
        assert (out / name).is_file(), name
    assert sorted(p.name for p in (out / "samples").glob("cand_*.png")) == [
        "cand_000.png", "cand_001.png", "cand_002.png"]
    loss = rows(out / "loss.csv")
    assert loss[0] == ["epoch", "l_diff", "l_dis", "l_total"] and len(loss) == 3
    rank = rows(out / "rank.csv")
    assert rank[0] == ["rank", "file", "glyph_score", "style_score", "score_sum", "pareto"]
    assert [r[0] for r in rank[1:]] == ["1", "2", "3"]
    assert rank[1][5] == "1"
    sums = [float(r[4]) for r in rank[1:]]
    assert sums == sorted(sums, reverse=True)
    ev = rows(out / "eval.csv")
    assert ev[0] == ["method_tag", "ocr", "ocr_blurred", "style_score"] and ev[1][0] == "ours"
    assert 0 <= float(ev[1][1]) <= 100


def test_rank_scatter_csv_and_eval_tag(smoke_run, tmp_path, capsys):
    cfg, out = smoke_run
    code, res, _ = run(capsys, "rank", "--config", cfg, "--out", out,
                       "--scatter-csv", tmp_path / "pts.csv")
    assert code == 0 and json.loads(res)["front"]
    assert rows(tmp_path / "pts.csv")[0] == ["file", "glyph_score", "style_score"]
    code, _, _ = run(capsys, "eval", "--config", cfg, "--out", out, "--tag", "baseline",
                     "--blur-sigma", "2")
    assert code == 0 and rows(out / "eval.csv")[1][0] == "baseline"


def test_eval_rejects_words(smoke_run, capsys):
    cfg, out = smoke_run
    words = out.parent / "words.cfg"
    words.write_text(cfg.read_text().replace("text = A", "text = AB"))
    code, _, err = run(capsys, "eval", "--config", words, "--out", out)
    assert code == 1 and "single letters" in err


def test_train_from_scratch_when_base_disabled(smoke_run, tmp_path, capsys):
    cfg, out = smoke_run
    other = tmp_path / "scratch"
    other.mkdir()
    (other / "codec.dsfc").write_bytes((out / "codec.dsfc").read_bytes())
    code, _, _ = run(capsys, "train", "--config", cfg, "--out", other, "--epochs", "1")
    assert code == 1  # base_steps > 0 but no checkpoint
    cfg2 = tmp_path / "scratch.cfg"
    cfg2.write_text(cfg.read_text().replace("base_steps = 5", "base_steps = 0"))
    code, _, err = run(capsys, "train", "--config", cfg2, "--out", other, "--epochs", "1")
    assert code == 0, err
    assert (other / "bundle.dsfb").is_file()
