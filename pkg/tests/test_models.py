import numpy as np
import pytest

from advsep import autodiff as ad
from advsep import dsp
from advsep.autodiff import Tensor
from advsep.dsp import StftConfig
from advsep.models import (
    Discriminator,
    DiscriminatorSpec,
    Separator,
    SeparatorConfig,
    assemble_d_input,
)


TINY = SeparatorConfig(k=2, stft=StftConfig(8000, 64, 16, 64), encoder_channels=(4, 6, 6, 6))


@pytest.fixture(scope="module")
def tiny_out():
    sep = Separator(TINY, seed=0)
    rng = np.random.default_rng(0)
    mix = rng.normal(size=400)
    with ad.no_grad():
        return sep, mix, sep.forward(mix)


# ---------------------------------------------------------------------------
# separator
# ---------------------------------------------------------------------------


def test_masks_sum_to_one(tiny_out):
    _, _, out = tiny_out
    np.testing.assert_allclose(out.masks.data.sum(axis=1), 1.0, atol=1e-6)
    assert (out.masks.data >= 0).all()


def test_estimated_magnitudes_conserve_mixture(tiny_out):
    _, _, out = tiny_out
    total = np.abs(out.est_re.data + 1j * out.est_im.data).sum(axis=1)
    np.testing.assert_allclose(total, out.mix_mag, atol=1e-6)
    np.testing.assert_allclose(out.est_mags.data.sum(axis=1), out.mix_mag, atol=1e-6)


def test_k_outputs_and_input_length(tiny_out):
    sep, mix, out = tiny_out
    assert out.est_waves.shape == (1, TINY.k, len(mix))
    masks, specs, waves = sep.separate(mix, mixture_consistent=False)
    assert masks.shape[0] == TINY.k and waves.shape == (TINY.k, len(mix))


def test_mixture_consistent_inference(tiny_out):
    sep, mix, _ = tiny_out
    _, _, waves = sep.separate(mix, mixture_consistent=True)
    np.testing.assert_allclose(waves.sum(axis=0), mix, atol=1e-9)


def test_batched_forward_matches_single(tiny_out):
    sep, mix, out = tiny_out
    rng = np.random.default_rng(1)
    other = rng.normal(size=len(mix))
    with ad.no_grad():
        batched = sep.forward(np.stack([mix, other]))
    np.testing.assert_allclose(batched.est_waves.data[0], out.est_waves.data[0], atol=1e-10)


def test_too_short_input_rejected():
    sep = Separator(TINY, seed=0)
    with pytest.raises(ValueError, match="minimum length"):
        sep.forward(np.zeros(TINY.min_input_len - 1))


def test_desk_and_paper_configs_share_code_path():
    desk = Separator(SeparatorConfig.desk(), seed=0)
    paper_cfg = SeparatorConfig.paper_scale()
    # parameter counts are monotone in channel widths without building 46.9M floats
    wider = SeparatorConfig(k=4, stft=StftConfig.desk(), encoder_channels=(24, 48, 48, 48))
    assert Separator(wider, seed=0).param_count() > desk.param_count()
    assert paper_cfg.encoder_channels == (256, 512, 512, 512)
    assert paper_cfg.stft.window_len == 512 and paper_cfg.stft.hop == 128


def test_separator_deterministic_given_seed():
    a = Separator(TINY, seed=7)
    b = Separator(TINY, seed=7)
    for (na, ta), (nb, tb) in zip(a.parameters(), b.parameters()):
        assert na == nb
        np.testing.assert_array_equal(ta.data, tb.data)


def test_gradients_reach_all_parameters():
    sep = Separator(TINY, seed=3)
    mix = np.random.default_rng(2).normal(size=400)
    out = sep.forward(mix)
    loss = ad.sum_(ad.square(out.est_waves))
    ad.backward(loss)
    missing = [n for n, p in sep.parameters() if p.grad is None]
    assert not missing, f"parameters without gradient: {missing}"


# ---------------------------------------------------------------------------
# discriminators
# ---------------------------------------------------------------------------


def test_wave_extent_after_conv_stack():
    # repeated floor((n-4)/3)+1 on 160000 samples gives 1974 before projection
    n = 160000
    for _ in range(4):
        n = (n - 4) // 3 + 1
    assert n == 1974
    d = Discriminator(DiscriminatorSpec("wave", "instance"), input_extent=160000, seed=0)
    assert d.flat_extent == 1974 - 3  # kernel-4 stride-1 projection follows


def test_scalar_output_for_each_domain():
    wave = Discriminator(DiscriminatorSpec("wave", "instance"), 2000, seed=0)
    assert wave.forward(np.random.default_rng(0).normal(size=(1, 2000))).shape == (1,)
    ctx = Discriminator(
        DiscriminatorSpec("stft", "context", m_conditioned=True, i_replace=1, k=4), (30, 33), seed=0
    )
    assert ctx.forward(np.random.default_rng(1).normal(size=(5, 30, 33))).shape == (1,)
    batched = ctx.forward(np.random.default_rng(2).normal(size=(3, 5, 30, 33)))
    assert batched.shape == (3,)


def test_conditioned_wave_context_expects_five_channels():
    spec = DiscriminatorSpec("wave", "context", m_conditioned=True, i_replace=3, k=4)
    assert spec.input_channels == 5
    d = Discriminator(spec, 1000, seed=0)
    with pytest.raises(ValueError, match="channels"):
        d.forward(np.zeros((4, 1000)))


def test_too_short_wave_input_rejected_with_minimum():
    with pytest.raises(ValueError, match="minimum extent is 364"):
        Discriminator(DiscriminatorSpec("wave", "instance"), 363, seed=0)
    Discriminator(DiscriminatorSpec("wave", "instance"), 364, seed=0)


def test_geometry_mismatch_rejected():
    d = Discriminator(DiscriminatorSpec("wave", "instance"), 1000, seed=0)
    with pytest.raises(ValueError, match="extent"):
        d.forward(np.zeros((1, 999)))


def test_zeroed_final_layer_scores_zero():
    d = Discriminator(DiscriminatorSpec("mask", "instance"), (25, 33), seed=0)
    d.params["final.w"].data[:] = 0.0
    d.params["final.b"].data[:] = 0.0
    out = d.forward(np.random.default_rng(3).normal(size=(1, 25, 33)))
    np.testing.assert_array_equal(out.data, [0.0])


def test_discriminator_deterministic():
    spec = DiscriminatorSpec("wave", "context", i_replace=1, k=2)
    d = Discriminator(spec, 800, seed=5)
    x = np.random.default_rng(4).normal(size=(2, 800))
    np.testing.assert_array_equal(d.forward(x).data, d.forward(x).data)


def test_spec_validation():
    with pytest.raises(ValueError):
        DiscriminatorSpec("wave", "context", i_replace=4, k=4)
    with pytest.raises(ValueError):
        DiscriminatorSpec("wave", "instance", m_conditioned=True)
    with pytest.raises(ValueError):
        DiscriminatorSpec("spectrogram", "instance")


def test_discriminator_gradients_flow():
    d = Discriminator(DiscriminatorSpec("wave", "instance"), 600, seed=1)
    x = Tensor(np.random.default_rng(5).normal(size=(1, 600)), requires_grad=True)
    score = d.forward(x)
    ad.backward(ad.sum_(score))
    assert x.grad is not None
    assert all(p.grad is not None for _, p in d.parameters())


# ---------------------------------------------------------------------------
# input assembly
# ---------------------------------------------------------------------------


def test_assemble_instance_waveform():
    spec = DiscriminatorSpec("wave", "instance")
    out = assemble_d_input(spec, [np.zeros(100)])
    assert out.shape == (1, 100)


def test_assemble_conditioned_mask_context():
    spec = DiscriminatorSpec("mask", "context", m_conditioned=True, i_replace=2, k=4)
    items = [np.zeros((12, 17))] * 4
    out = assemble_d_input(spec, items, mix=np.ones((12, 17)))
    assert out.shape == (5, 12, 17)
    np.testing.assert_array_equal(out.data[0], np.ones((12, 17)))


def test_assemble_unconditioned_stft_context():
    spec = DiscriminatorSpec("stft", "context", i_replace=1, k=4)
    out = assemble_d_input(spec, [np.zeros((10, 9))] * 4)
    assert out.shape == (4, 10, 9)


def test_assemble_validation():
    ctx = DiscriminatorSpec("stft", "context", i_replace=1, k=4)
    with pytest.raises(ValueError, match="K=4"):
        assemble_d_input(ctx, [np.zeros((10, 9))] * 3)
    with pytest.raises(ValueError, match="rank"):
        assemble_d_input(ctx, [np.zeros(90)] * 4)
    with pytest.raises(ValueError, match="shapes"):
        assemble_d_input(ctx, [np.zeros((10, 9))] * 3 + [np.zeros((9, 10))])
    cond = DiscriminatorSpec("stft", "context", m_conditioned=True, i_replace=1, k=2)
    with pytest.raises(ValueError, match="mix-conditioned"):
        assemble_d_input(cond, [np.zeros((10, 9))] * 2)
    inst = DiscriminatorSpec("wave", "instance")
    with pytest.raises(ValueError, match="one item"):
        assemble_d_input(inst, [np.zeros(10), np.zeros(10)])
