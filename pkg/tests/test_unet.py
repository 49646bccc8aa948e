import numpy as np
import pytest
import torch

from tripletdiff.diffusion.unet import Denoiser, DenoiserConfig, count_parameters
from tripletdiff.errors import ConfigError, ContractError

TINY = dict(image_size=16, base_channels=8, channel_mults=(1, 2), attention_levels=(1,), text_dim=12, heads=4)


def _model(seed=0, dtype=torch.float32, **kw):
    torch.manual_seed(seed)
    m = Denoiser(DenoiserConfig(**{**TINY, **kw})).to(dtype)
    with torch.no_grad():  # the output conv starts at zero; give it weights so outputs are informative
        m.conv_out.weight.normal_(0, 0.1)
    return m.eval()


def _inputs(b=2, s=16, L=5, d=12, dtype=torch.float32, seed=1):
    g = torch.Generator().manual_seed(seed)
    x = torch.randn(b, 3, s, s, generator=g, dtype=dtype)
    tokens = torch.randn(b, L, d, generator=g, dtype=dtype)
    mask = torch.ones(b, L, dtype=torch.bool)
    mask[0, 3:] = False
    tokens[~mask] = 0
    return x, torch.tensor([3, 7]), tokens, mask


def test_base_shape_and_params():
    m = _model()
    x, t, tok, mask = _inputs()
    assert m(x, t, tok, mask).shape == x.shape
    assert count_parameters(m) > 0


def test_padding_invariance():
    m = _model()
    x, t, tok, mask = _inputs()
    out = m(x, t, tok, mask)
    pad_tok = torch.cat([tok, torch.randn(2, 4, 12)], dim=1)
    pad_mask = torch.cat([mask, torch.zeros(2, 4, dtype=torch.bool)], dim=1)
    torch.testing.assert_close(m(x, t, pad_tok, pad_mask), out, atol=1e-6, rtol=0)


def test_text_pathway_is_live():
    m = _model()
    x, t, tok, mask = _inputs()
    assert (m(x, t, tok, mask) - m(x, t, tok * -1.5, mask)).abs().max() > 0


def test_sr_shape_and_scale_contract():
    m = _model(variant="sr", sr_scale=2)
    x, t, tok, mask = _inputs()
    assert m(x, t, tok, mask, lowres=torch.randn(2, 3, 8, 8)).shape == x.shape
    with pytest.raises(ContractError, match="scale 2"):
        m(x, t, tok, mask, lowres=torch.randn(2, 3, 4, 4))
    with pytest.raises(ContractError):
        _model()(x, t, tok, mask, lowres=torch.randn(2, 3, 8, 8))


def test_sr_x4_operates_at_64():
    m = _model(image_size=64, variant="sr", sr_scale=4)
    x, t, tok, mask = _inputs(s=64)
    assert m(x, t, tok, mask, lowres=torch.randn(2, 3, 16, 16)).shape == (2, 3, 64, 64)


def test_unconditioned_flag_changes_output():
    m = _model(variant="sr", sr_scale=2)
    x, t, tok, mask = _inputs()
    low = torch.randn(2, 3, 8, 8)
    a = m(x, t, tok, mask, lowres=low, unconditioned=False)
    b = m(x, t, tok, mask, lowres=low, unconditioned=True)
    assert (a - b).abs().max() > 0
    # an unconditioned model ignores the text entirely
    u = _model(variant="sr", sr_scale=2, text_conditioned=False)
    torch.testing.assert_close(u(x, t, tok, mask, lowres=low), u(x, t, tok * 3, mask, lowres=low))


def test_shape_errors():
    m = _model()
    x, t, tok, mask = _inputs()
    with pytest.raises(ContractError):
        m(x[:, :, :8, :8], t, tok, mask)
    with pytest.raises(ContractError):
        m(x, t, tok[..., :5], mask)
    with pytest.raises(ContractError):
        m(x, t, tok, mask.int())


@pytest.mark.parametrize("kw", [dict(image_size=15), dict(attention_levels=()), dict(attention_levels=(2,)),
                                dict(variant="sr", sr_scale=1), dict(base_channels=6), dict(variant="x")])
def test_config_errors(kw):
    with pytest.raises(ConfigError):
        DenoiserConfig(**{**TINY, **kw})


def test_config_json_round_trip():
    c = DenoiserConfig(**TINY)
    assert DenoiserConfig.from_json(c.to_json()) == c


def test_gradient_matches_finite_differences():
    """Central differences in float64 on a random subset of parameter coordinates."""
    m = _model(dtype=torch.float64)
    x, t, tok, mask = _inputs(dtype=torch.float64)
    target = torch.randn_like(x)

    def loss():
        return ((m(x, t, tok, mask) - target) ** 2).mean()

    m.zero_grad()
    loss().backward()
    rng = np.random.default_rng(0)
    named = [(n, p) for n, p in m.named_parameters()]
    h = 1e-6
    for k in rng.choice(len(named), 24, replace=True):
        name, p = named[k]
        flat = p.data.view(-1)
        j = int(rng.integers(flat.numel()))
        with torch.no_grad():
            old = flat[j].item()
            flat[j] = old + h
            up = loss().item()
            flat[j] = old - h
            down = loss().item()
            flat[j] = old
        fd = (up - down) / (2 * h)
        an = p.grad.view(-1)[j].item()
        assert an == pytest.approx(fd, rel=1e-4, abs=1e-8), name
