"""
LDSeg - Model Tests
Shapes, latent normalization, decoder probabilities, skip-connection
structure and gradient flow of the four networks.
"""

import math

import numpy as np
import pytest

from src.diffusion import make_linear_schedule
from src.errors import DimensionError, RangeError
from src.models import (
    ConditionalDenoiser,
    ImageEncoder,
    MaskAutoencoder,
    ResUnet,
    argmax_labels,
    autoencoder_loss,
    baseline_segment,
    denoise_eps,
    denoiser_loss,
    image_encode,
    mask_decode,
    mask_encode,
    one_hot,
)
from src.models.blocks import ResBlock
from src.numerics import ParamStore, RngStream, Tensor, backward


@pytest.fixture
def labels():
    return np.random.default_rng(5).integers(0, 3, size=(2, 16, 16))


@pytest.fixture
def autoencoder(tiny_model_cfg):
    return MaskAutoencoder(tiny_model_cfg, RngStream(0, 1))


class TestOneHot:
    """Test the label encoding."""

    def test_channels(self):
        """Test that every pixel has exactly one active channel."""
        encoded = one_hot(np.array([[0, 2], [1, 0]]), 3)
        assert encoded.shape == (1, 3, 2, 2)
        np.testing.assert_array_equal(encoded.sum(axis=1), 1.0)
        assert encoded[0, 2, 0, 1] == 1.0

    def test_out_of_range(self):
        """Test that labels >= C are rejected."""
        with pytest.raises(RangeError):
            one_hot(np.array([[0, 3]]), 3)

    def test_wrong_rank(self):
        """Test that 1-D labels are rejected."""
        with pytest.raises(DimensionError):
            one_hot(np.zeros(4, dtype=int), 3)


class TestMaskAutoencoder:
    """Test encoder and decoder of the mask autoencoder."""

    def test_latent_shape(self, autoencoder, labels):
        """Test (N, 1, H/2^L, W/2^L) for 16x16 masks and two levels."""
        assert mask_encode(labels, autoencoder).shape == (2, 1, 4, 4)

    def test_latent_is_normalized(self, autoencoder, labels):
        """Test per-sample mean 0 and variance 1."""
        latent = mask_encode(labels, autoencoder).data.reshape(2, -1)
        np.testing.assert_allclose(latent.mean(axis=1), 0.0, atol=1e-4)
        np.testing.assert_allclose(latent.var(axis=1), 1.0, atol=1e-2)

    def test_single_mask(self, autoencoder):
        """Test that an (H, W) map is treated as a batch of one."""
        assert mask_encode(np.zeros((16, 16), dtype=int), autoencoder).shape == (1, 1, 4, 4)

    def test_indivisible_size(self, autoencoder):
        """Test that sizes not divisible by 2^depth raise DimensionError."""
        with pytest.raises(DimensionError):
            mask_encode(np.zeros((1, 15, 15), dtype=int), autoencoder)

    def test_untrained_decoder_is_uniform(self, autoencoder, labels):
        """Test probabilities sum to one and equal 1/C before training."""
        probs, decoded = mask_decode(mask_encode(labels, autoencoder), autoencoder)
        assert probs.shape == (2, 3, 16, 16)
        np.testing.assert_allclose(probs.data.sum(axis=1), 1.0, atol=1e-5)
        np.testing.assert_allclose(probs.data, 1.0 / 3.0, atol=1e-5)
        assert decoded.shape == (2, 16, 16)

    def test_uniform_loss_is_log_c(self, autoencoder, labels):
        """Test that cross-entropy of a uniform prediction equals log C."""
        probs, _ = mask_decode(mask_encode(labels, autoencoder), autoencoder)
        assert autoencoder_loss(probs, labels).item() == pytest.approx(math.log(3), rel=1e-4)

    def test_perfect_prediction_loss(self, labels):
        """Test that one-hot probabilities give a zero loss."""
        assert autoencoder_loss(Tensor(one_hot(labels, 3)), labels).item() == pytest.approx(0.0, abs=1e-6)

    def test_loss_shape_mismatch(self, labels):
        """Test probabilities and labels must agree."""
        with pytest.raises(DimensionError):
            autoencoder_loss(Tensor(np.ones((2, 3, 8, 8)) / 3), labels)

    def test_decode_rejects_wrong_channels(self, autoencoder):
        """Test that latents must have one channel."""
        with pytest.raises(DimensionError):
            mask_decode(np.zeros((1, 2, 4, 4)), autoencoder)

    def test_no_skip_connections(self, autoencoder):
        """Test that no decoder layer reads encoder features."""
        assert autoencoder.has_skip_connections is False
        assert all(not name.startswith("encoder") for _, name in autoencoder.decoder.layers)

    def test_widened_block_counts_as_skip(self, autoencoder):
        """Test that a decoder block taking features plus a skip is detected."""
        cout = autoencoder.decoder.blocks[0].cout
        autoencoder.decoder.blocks[0] = ResBlock(ParamStore(), "skip", RngStream(0), 2 * cout, cout, 2)
        assert autoencoder.has_skip_connections is True

    def test_encoder_layer_in_decoder_counts_as_skip(self, autoencoder):
        """Test that a decoder layer reading an encoder tensor is detected."""
        autoencoder.decoder.layers.append(("conv", "encoder.stem"))
        assert autoencoder.has_skip_connections is True

    def test_loss_reaches_encoder(self, autoencoder, labels):
        """Test that the decoder loss back-propagates into encoder parameters."""
        out = autoencoder.store["decoder.out.weight"]
        out.data = RngStream(1).normal(out.shape, scale=0.1)
        probs, _ = mask_decode(mask_encode(labels, autoencoder), autoencoder)
        autoencoder.store.zero_grads()
        loss = autoencoder_loss(probs, labels)
        backward(loss, autoencoder.store.tensors())
        assert np.abs(autoencoder.store["encoder.stem.weight"].grad).sum() > 0

    def test_same_seed_same_weights(self, tiny_model_cfg):
        """Test that construction is reproducible from the random stream."""
        a = MaskAutoencoder(tiny_model_cfg, RngStream(4, 1))
        b = MaskAutoencoder(tiny_model_cfg, RngStream(4, 1))
        assert a.store.fingerprint() == b.store.fingerprint()


class TestConditionalDenoiser:
    """Test the image encoder and eps-predictor."""

    def make(self, cfg):
        store, rng = ParamStore(), RngStream(0, 1)
        encoder = ImageEncoder(store, "image_encoder", rng.child(0), cfg)
        denoiser = ConditionalDenoiser(store, "denoiser", rng.child(1), cfg)
        return store, encoder, denoiser

    def test_embedding_shape(self, tiny_model_cfg):
        """Test that images embed onto the latent grid."""
        _, encoder, _ = self.make(tiny_model_cfg)
        images = np.random.default_rng(0).uniform(size=(3, 16, 16))
        assert image_encode(images, encoder).shape == (3, 1, 4, 4)

    @pytest.mark.parametrize("t", [1, 10, np.array([1, 7])])
    def test_eps_shape(self, tiny_model_cfg, t):
        """Test that predicted eps has the latent shape for scalar and per-sample t."""
        _, encoder, denoiser = self.make(tiny_model_cfg)
        e = image_encode(np.zeros((2, 16, 16)), encoder)
        mt = Tensor(np.random.default_rng(1).normal(size=(2, 1, 4, 4)))
        assert denoise_eps(mt, e, t, denoiser).shape == (2, 1, 4, 4)

    def test_timestep_changes_prediction(self, tiny_model_cfg):
        """Test that the timestep is an input of the network."""
        _, encoder, denoiser = self.make(tiny_model_cfg)
        e = image_encode(np.random.default_rng(2).uniform(size=(1, 16, 16)), encoder)
        mt = Tensor(np.random.default_rng(3).normal(size=(1, 1, 4, 4)))
        assert not np.allclose(denoise_eps(mt, e, 1, denoiser).data, denoise_eps(mt, e, 9, denoiser).data)

    def test_mismatched_embedding(self, tiny_model_cfg):
        """Test that latent and embedding grids must agree."""
        _, _, denoiser = self.make(tiny_model_cfg)
        with pytest.raises(DimensionError):
            denoise_eps(np.zeros((1, 1, 4, 4)), np.zeros((1, 1, 2, 2)), 1, denoiser)

    def test_add_fusion_single_channel_stem(self, tiny_model_cfg):
        """Test that additive fusion feeds one channel and concatenation feeds two."""
        store, _, _ = self.make(tiny_model_cfg)
        assert store["denoiser.stem.weight"].shape[1] == 2
        add_store, encoder, denoiser = self.make(tiny_model_cfg.model_copy(update={"fusion": "add"}))
        assert add_store["denoiser.stem.weight"].shape[1] == 1
        e = image_encode(np.zeros((1, 16, 16)), encoder)
        assert denoise_eps(np.zeros((1, 1, 4, 4)), e, 3, denoiser).shape == (1, 1, 4, 4)

    def test_loss_reaches_image_encoder(self, tiny_model_cfg):
        """Test that the noise-prediction loss trains the image encoder jointly."""
        store, encoder, denoiser = self.make(tiny_model_cfg)
        g = np.random.default_rng(4)
        m0, eps = g.normal(size=(2, 1, 4, 4)), g.normal(size=(2, 1, 4, 4))
        loss = denoiser_loss(
            m0, g.uniform(size=(2, 16, 16)), np.array([2, 8]), eps, make_linear_schedule(10),
            embed=lambda images: image_encode(images, encoder),
            predict=lambda mt, e, t: denoise_eps(mt, e, t, denoiser),
        )
        assert loss.item() > 0
        store.zero_grads()
        backward(loss, store.tensors())
        assert np.abs(store["image_encoder.stem.weight"].grad).sum() > 0
        assert np.abs(store["denoiser.out.weight"].grad).sum() > 0


class TestResUnet:
    """Test the full-resolution baseline."""

    def test_probabilities(self, tiny_model_cfg):
        """Test output (N, C, H, W) summing to one per pixel."""
        model = ResUnet(tiny_model_cfg, RngStream(0, 1))
        probs = model(np.random.default_rng(0).uniform(size=(2, 16, 16)))
        assert probs.shape == (2, 3, 16, 16)
        np.testing.assert_allclose(probs.data.sum(axis=1), 1.0, atol=1e-5)

    def test_has_skip_connections(self, tiny_model_cfg):
        """Test that every decoder level concatenates encoder features."""
        model = ResUnet(tiny_model_cfg, RngStream(0, 1))
        assert model.has_skip_connections is True
        assert [block.cin for block in model.up_blocks] == [16, 8]

    def test_untrained_segment_is_background(self, tiny_model_cfg):
        """Test that uniform probabilities resolve ties to class 0."""
        labels = baseline_segment(np.ones((1, 16, 16)), ResUnet(tiny_model_cfg, RngStream(0, 1)))
        assert labels.shape == (1, 16, 16)
        assert labels.max() == 0


def test_argmax_ties_lowest_index():
    """Test the tie-breaking rule of argmax_labels."""
    probs = np.array([[[[0.4]], [[0.4]], [[0.2]]]])
    assert argmax_labels(probs)[0, 0, 0] == 0
