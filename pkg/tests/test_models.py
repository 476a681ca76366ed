import pytest
import torch

from privsemcom.channel import ChannelRealization, sample_fading, transmit
from privsemcom.config import ExperimentConfig
from privsemcom.metrics import LossWeights, bob_loss
from privsemcom.models import (CheckpointError, ModelBundle, build_bundle, build_encoder,
                               build_recon_decoder, build_semantic_classifier, param_count)


@pytest.mark.parametrize("shape,fmap", [((28, 28, 1), (128, 7, 7)), ((32, 32, 3), (128, 8, 8))])
def test_encoder_feature_map(shape, fmap):
    enc = build_encoder(shape, 32).eval()
    x = torch.rand(2, shape[2], shape[0], shape[1])
    assert tuple(enc.features(x).shape[1:]) == fmap
    z = enc.encode(x)
    assert z.iq.shape == (2, 2, 32) and z.normalized
    torch.testing.assert_close(z.power(), torch.ones(2), atol=1e-5, rtol=0)


def test_encoder_rejects_indivisible_shape():
    with pytest.raises(ValueError):
        build_encoder((30, 30, 1), 8)


@pytest.mark.parametrize("shape", [(28, 28, 1), (32, 32, 3)])
def test_decoder_round_trip_shape(shape):
    enc, dec = build_encoder(shape, 16).eval(), build_recon_decoder(16, shape).eval()
    x = torch.rand(3, shape[2], shape[0], shape[1])
    ch = ChannelRealization(sample_fading(3), 5.0)
    out = dec(transmit(enc.encode(x), ch))
    assert out.shape == x.shape


def test_decoder_output_range():
    dec = build_recon_decoder(256, (28, 28, 1)).eval()
    out = dec(torch.randn(4, 2, 256) * 10)
    assert out.shape == (4, 1, 28, 28)
    assert torch.isfinite(out).all() and (out > 0).all() and (out < 1).all()


def test_classifier_logits():
    cls = build_semantic_classifier(32, 10).eval()
    y = torch.randn(5, 2, 32)
    logits = cls(y)
    assert logits.shape == (5, 10)
    assert torch.equal(logits, cls(y))
    torch.testing.assert_close(logits.softmax(1).sum(1), torch.ones(5), atol=1e-6, rtol=0)


def test_eve_and_bob_share_architecture():
    b = build_bundle(ExperimentConfig(latent_dim=32))
    assert param_count(b.eve_cls) == param_count(b.bob_cls)
    assert [p.shape for p in b.eve_cls.parameters()] == [p.shape for p in b.bob_cls.parameters()]


def end_to_end_fd_errors(n_probes=5, seed=0):
    """Relative errors of autograd vs central differences for loss -> encoder input."""
    torch.manual_seed(seed)
    cfg = ExperimentConfig(latent_dim=8, cls_hidden=(16, 16))
    b = build_bundle(cfg)
    for m in b.modules().values():
        m.double().eval()
    g = torch.Generator().manual_seed(seed)
    x0 = torch.rand(2, 1, 28, 28, generator=g, dtype=torch.float64)
    labels = torch.tensor([1, 7])
    ch = ChannelRealization(sample_fading(2, g, dtype=torch.float64), 5.0)
    noise = torch.randn(2, 2, 8, generator=g, dtype=torch.float64) * 0.3

    def loss(x):
        y = transmit(b.encoder.encode(x), ch, noise=noise)
        return bob_loss(b.bob_cls(y), labels, b.recon(y), x0, LossWeights())

    x = x0.clone().requires_grad_(True)
    (grad,) = torch.autograd.grad(loss(x), x)
    errs = []
    step = 1e-5
    for _ in range(n_probes):
        v = torch.randn(x0.shape, generator=g, dtype=torch.float64)
        v /= v.norm()
        fd = (loss(x0 + step * v) - loss(x0 - step * v)).item() / (2 * step)
        ad = (grad * v).sum().item()
        errs.append(abs(ad - fd) / max(abs(fd), 1e-12))
    return errs


def test_end_to_end_gradient_matches_finite_differences():
    assert max(end_to_end_fd_errors()) < 1e-2


def test_checkpoint_round_trip(tmp_path):
    b = build_bundle(ExperimentConfig(latent_dim=8, cls_hidden=(16, 8)))
    b.training_mode = "baseline"
    path = b.save(tmp_path / "b.pt")
    again = ModelBundle.load(path)
    assert again.training_mode == "baseline"
    for name in ("encoder", "recon", "bob_cls", "eve_cls"):
        sa, sb = getattr(b, name).state_dict(), getattr(again, name).state_dict()
        assert all(torch.equal(sa[k], sb[k]) for k in sa)


def test_partial_checkpoint_rejected(tmp_path):
    b = build_bundle(ExperimentConfig(latent_dim=8, cls_hidden=(16, 8)))
    path = b.save(tmp_path / "b.pt")
    blob = torch.load(path, weights_only=False)
    del blob["params"]["eve_cls"]
    torch.save(blob, path)
    with pytest.raises(CheckpointError, match="eve_cls"):
        ModelBundle.load(path)


def test_config_hash_verified(tmp_path):
    b = build_bundle(ExperimentConfig(latent_dim=8, cls_hidden=(16, 8)))
    path = b.save(tmp_path / "b.pt")
    blob = torch.load(path, weights_only=False)
    blob["config_hash"] = "0" * 16
    torch.save(blob, path)
    with pytest.raises(CheckpointError, match="hash"):
        ModelBundle.load(path)
