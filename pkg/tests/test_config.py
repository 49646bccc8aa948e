import pytest
from hypothesis import given, strategies as st

from tripletdiff.config import RunConfig, dump_config, load_config, preset
from tripletdiff.errors import ConfigError


def test_desk_defaults():
    cfg = load_config().validate()
    f = cfg.diffusion
    assert (f.base_size, f.sr_scale, f.sr_size, f.T, cfg.text.d) == (16, 2, 32, 200, 64)
    assert cfg.balance.mode == "instrument" and cfg.data.image_size == 32


def test_paper_preset():
    cfg = preset("paper")
    f = cfg.diffusion
    assert (f.base_size, f.sr_scale, f.sr_size, f.T, f.batch_size, f.steps) == (64, 4, 256, 1000, 16, 300_000)
    assert cfg.data.source == "cholect50"
    cfg.validate()
    assert cfg.denoiser_config("sr", 0).lowres_size == 64


def test_precedence_flags_over_file_over_preset(tmp_path):
    ini = tmp_path / "c.ini"
    ini.write_text("[run]\npreset = desk\n[diffusion]\nT = 50\nsteps = 7\n[text]\nencoder = hash\n")
    cfg = load_config(ini, ["diffusion.T=25", "diffusion.channel_mults=1,2"])
    assert cfg.diffusion.T == 25 and cfg.diffusion.steps == 7 and cfg.text.encoder == "hash"
    assert cfg.diffusion.channel_mults == (1, 2) and cfg.diffusion.beta_end == 0.1


@pytest.mark.parametrize("override", ["diffusion.nope=1", "bogus.T=3", "diffusion.T", "T=3", "diffusion.T=abc",
                                      "diffusion.ema=maybe"])
def test_bad_overrides(override):
    with pytest.raises(ConfigError):
        load_config(overrides=[override])


def test_unknown_file_key(tmp_path):
    ini = tmp_path / "c.ini"
    ini.write_text("[data]\ncolour = red\n")
    with pytest.raises(ConfigError, match="data.colour"):
        load_config(ini)


@pytest.mark.parametrize("override", ["diffusion.sr_size=48", "data.image_size=16", "balance.mode=verb",
                                      "diffusion.base_optimizer=sgd", "text.encoder=table", "diffusion.lr=0",
                                      "diffusion.base_channels=6", "eval.extractor=file", "data.source=video"])
def test_cross_field_validation(override):
    with pytest.raises(ConfigError):
        load_config(overrides=[override]).validate()


def test_dump_round_trip():
    cfg = load_config(overrides=["diffusion.T=33", "text.encoder=hash", "diffusion.ema=true"])
    again = load_config(overrides=[])
    assert again.hash() != cfg.hash()
    import tempfile, pathlib
    with tempfile.TemporaryDirectory() as d:
        p = pathlib.Path(d) / "c.ini"
        p.write_text(dump_config(cfg))
        assert load_config(p).to_dict() == cfg.to_dict()
    p2 = preset("paper")
    with tempfile.TemporaryDirectory() as d:
        p = pathlib.Path(d) / "c.ini"
        p.write_text(dump_config(p2))
        assert load_config(p).hash() == p2.hash()


@given(st.integers(1, 5000), st.floats(1e-6, 1.0))
def test_hash_tracks_content(T, lr):
    a = load_config(overrides=[f"diffusion.T={T}", f"diffusion.lr={lr!r}"])
    b = load_config(overrides=[f"diffusion.T={T}", f"diffusion.lr={lr!r}"])
    assert a.hash() == b.hash() and a.diffusion.lr == lr
    assert a.hash() != RunConfig().hash() or (T == 200 and lr == 1e-4)
