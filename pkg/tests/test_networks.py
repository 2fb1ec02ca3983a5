import pytest
import torch

import fd
from gpmvc.errors import ConfigError, ShapeError
from gpmvc.networks import (
    ModelState,
    NetworkConfig,
    discriminate,
    encode,
    generate,
    load_checkpoint,
    save_checkpoint,
)


@pytest.fixture
def state():
    torch.manual_seed(0)
    return ModelState(NetworkConfig(latent_dim=32), [76, 216, 64])


def small_state(dtype=torch.float64):
    torch.manual_seed(1)
    cfg = NetworkConfig(latent_dim=4, encoder_hidden=[6, 5], discriminator_hidden=[5, 3])
    return ModelState(cfg, [8, 8]).to(dtype)


def identity_state(d=5):
    cfg = NetworkConfig(latent_dim=d, encoder_hidden=[], shared_layers=0,
                        output_activation="identity")
    s = ModelState(cfg, [d, d])
    with torch.no_grad():
        for lin in [s.enc_private[0][0], s.generators[0][0]]:
            lin.weight.copy_(torch.eye(d))
            lin.bias.zero_()
    return s


class TestShapes:
    def test_encode(self, state):
        assert encode(state, 0, torch.rand(5, 76)).shape == (5, 32)

    def test_generate_range(self, state):
        out = generate(state, 1, torch.randn(5, 32) * 10)
        assert out.shape == (5, 216)
        assert out.min() >= 0 and out.max() <= 1

    def test_discriminate_range(self, state):
        p = discriminate(state, 2, torch.rand(7, 64))
        assert p.shape == (7,)
        assert ((p > 0) & (p < 1)).all()

    @pytest.mark.parametrize("fn,width", [(encode, 75), (generate, 31), (discriminate, 77)])
    def test_wrong_width(self, state, fn, width):
        with pytest.raises(ShapeError):
            fn(state, 0, torch.rand(3, width))

    def test_latent_smaller_than_k(self):
        with pytest.raises(ConfigError):
            NetworkConfig(latent_dim=4).validate(k=10)

    def test_generator_mirrors_encoder(self, state):
        enc = [m.out_features for m in state.enc_private[0] if isinstance(m, torch.nn.Linear)]
        gen = [m.out_features for m in state.generators[0] if isinstance(m, torch.nn.Linear)]
        assert enc == [512, 256]
        assert gen == [256, 512, 76]


class TestIdentity:
    def test_identity_encoder(self):
        s = identity_state()
        x = torch.rand(4, 5)
        torch.testing.assert_close(encode(s, 0, x), x)

    def test_round_trip(self):
        s = identity_state()
        x = torch.rand(4, 5)
        torch.testing.assert_close(generate(s, 0, encode(s, 0, x)), x)

    def test_zero_final_layer_gives_half(self, state):
        with torch.no_grad():
            last = state.discriminators[1][-2]
            last.weight.zero_()
            last.bias.zero_()
        assert torch.equal(discriminate(state, 1, torch.rand(6, 216)), torch.full((6,), 0.5))


class TestSharing:
    def test_shared_block_couples_views(self, state):
        xs = [torch.rand(3, d) for d in state.dims]
        before = [encode(state, v, x) for v, x in enumerate(xs)]
        with torch.no_grad():
            state.enc_shared[0].weight.add_(0.1)
        after = [encode(state, v, x) for v, x in enumerate(xs)]
        assert all(not torch.allclose(a, b) for a, b in zip(before, after))

    def test_private_block_is_private(self, state):
        xs = [torch.rand(3, d) for d in state.dims]
        before = [encode(state, v, x) for v, x in enumerate(xs)]
        with torch.no_grad():
            state.enc_private[1][0].weight.add_(0.1)
        after = [encode(state, v, x) for v, x in enumerate(xs)]
        assert torch.equal(before[0], after[0]) and torch.equal(before[2], after[2])
        assert not torch.allclose(before[1], after[1])

    def test_single_shared_instance(self, state):
        ids = {id(p) for p in state.enc_shared.parameters()}
        assert len(ids) == 2

    def test_deterministic(self, state):
        x = torch.rand(4, 76)
        assert torch.equal(encode(state, 0, x), encode(state, 0, x))


class TestGradients:
    """Autograd vs central differences on 8-dim random inputs."""

    @pytest.mark.parametrize("draw", range(5))
    def test_encode(self, draw):
        s = small_state()
        x = torch.rand(3, 8, dtype=torch.float64, generator=torch.Generator().manual_seed(draw))
        params = list(s.encoder_parameters())
        assert fd.check(lambda: (encode(s, 0, x) ** 2).sum(), params) < 1e-4

    @pytest.mark.parametrize("draw", range(5))
    def test_generate(self, draw):
        s = small_state()
        z = torch.randn(3, 4, dtype=torch.float64, generator=torch.Generator().manual_seed(draw))
        params = list(s.generators[1].parameters())
        assert fd.check(lambda: (generate(s, 1, z) ** 2).sum(), params) < 1e-4

    @pytest.mark.parametrize("draw", range(5))
    def test_discriminate(self, draw):
        s = small_state()
        x = torch.rand(3, 8, dtype=torch.float64, generator=torch.Generator().manual_seed(draw))
        params = list(s.discriminators[0].parameters())
        assert fd.check(lambda: (discriminate(s, 0, x) ** 2).sum(), params) < 1e-4

    def test_input_gradient(self):
        s = small_state()
        x = torch.rand(2, 8, dtype=torch.float64, requires_grad=True)
        assert fd.check(lambda: (encode(s, 1, x) ** 2).sum(), [x]) < 1e-4


class TestCheckpoint:
    def test_round_trip(self, tmp_path, state):
        save_checkpoint(state, tmp_path / "c.bin", extra={"note": 1})
        back, extra = load_checkpoint(tmp_path / "c.bin")
        assert extra == {"note": 1}
        x = torch.rand(4, 216)
        torch.testing.assert_close(encode(back, 1, x), encode(state, 1, x))
        assert set(back.named_tensors()) == set(state.named_tensors())

    def test_keys(self, state):
        keys = state.named_tensors()
        assert "encoder/shared/0.weight" in keys
        assert "encoder/2/1.bias" in keys
        assert "generator/0/2.weight" in keys
        assert "discriminator/1/2.bias" in keys
        assert "fusion/-/raw_weights" in keys

    def test_rejects_foreign_file(self, tmp_path):
        torch.save({"format": "other"}, tmp_path / "x.bin")
        with pytest.raises(ValueError):
            load_checkpoint(tmp_path / "x.bin")
