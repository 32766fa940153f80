import pytest

from crowdmrf.config import RunConfig, load_config, parse_config
from crowdmrf.exceptions import FormatError


def test_defaults():
    cfg = RunConfig()
    assert (cfg.patch_size, cfg.stride, cfg.folds, cfg.groups) == (100, 50, 5, 10)
    assert cfg.hidden == (100, 100, 50, 50)


def test_text_roundtrip(tmp_path):
    cfg = RunConfig(lambda_=2.5, disc_k=0.0, hidden=(8, 4), features="cfeat:/x", seed=9)
    assert parse_config(cfg.to_text()) == cfg
    path = tmp_path / "run.cfg"
    path.write_text("# comment\n" + cfg.to_text())
    assert load_config(path) == cfg
    assert "lambda=2.5" in cfg.to_text() and "data_k=auto" in cfg.to_text()


def test_overrides_skip_none():
    cfg = RunConfig().with_overrides(lambda_=None, epochs=3)
    assert cfg.lambda_ == 1.0 and cfg.epochs == 3


@pytest.mark.parametrize("text,line", [("bogus=1\n", 1), ("epochs=1\nepochs=x\n", 2)])
def test_bad_entries(text, line):
    with pytest.raises(FormatError) as info:
        parse_config(text)
    assert info.value.line == line


def test_bad_feature_source():
    with pytest.raises(ValueError):
        RunConfig(features="hog")
