import numpy as np
import pytest
import torch

from divseg.backbones import (
    NetworkSpec,
    build_network,
    batch_to_logitmaps,
    images_to_batch,
    register_arch,
    registered_archs,
)
from divseg.core import ImageTensor
from divseg.errors import ConfigurationError, InvalidInputError, ShapeError

ARCHS = ["unet", "unetpp", "fpn", "deeplabv3", "deeplabv3plus"]

SMALL = dict(base_width=4, depth=4)


class TestSpec:
    @pytest.mark.parametrize(
        "field,value",
        [("in_channels", 0), ("classes", 1), ("depth", 0), ("base_width", 0)],
    )
    def test_invalid_fields_rejected(self, field, value):
        kwargs = {"arch_id": "unet", field: value}
        with pytest.raises(InvalidInputError):
            NetworkSpec(**kwargs)


class TestRegistry:
    def test_builtins_present(self):
        assert set(ARCHS + ["triunet"]) <= set(registered_archs())

    def test_duplicate_registration_rejected(self):
        with pytest.raises(ConfigurationError):
            register_arch("unet", lambda spec: None)

    def test_custom_registration_listed_and_buildable(self):
        from divseg.backbones import MiniUNet, _REGISTRY

        register_arch("unet_alias_for_test", MiniUNet)
        try:
            assert "unet_alias_for_test" in registered_archs()
            net = build_network(NetworkSpec(arch_id="unet_alias_for_test", **SMALL))
            assert net(torch.zeros(1, 3, 32, 32)).shape == (1, 2, 32, 32)
        finally:
            _REGISTRY.pop("unet_alias_for_test")

    def test_unknown_arch_rejected(self):
        with pytest.raises(ConfigurationError, match="no-such-arch"):
            build_network(NetworkSpec(arch_id="no-such-arch"))


class TestForwardContract:
    @pytest.mark.parametrize("arch", ARCHS)
    @pytest.mark.parametrize("size", [32, 64, 128])
    def test_shape_preserved(self, arch, size):
        net = build_network(NetworkSpec(arch_id=arch, classes=3, **SMALL))
        out = net(torch.randn(1, 3, size, size))
        assert out.shape == (1, 3, size, size)
        assert torch.isfinite(out).all()

    @pytest.mark.parametrize("arch", ARCHS)
    def test_constant_zero_input_is_finite(self, arch):
        net = build_network(NetworkSpec(arch_id=arch, **SMALL))
        out = net(torch.zeros(1, 3, 32, 32))
        assert torch.isfinite(out).all()

    def test_eval_mode_is_deterministic(self):
        net = build_network(NetworkSpec(arch_id="unet", **SMALL))
        net.eval()
        x = torch.randn(2, 3, 32, 32)
        with torch.no_grad():
            assert torch.equal(net(x), net(x))

    def test_channel_mismatch_rejected(self):
        net = build_network(NetworkSpec(arch_id="unet", in_channels=3, **SMALL))
        with pytest.raises(ShapeError, match="channel"):
            net(torch.zeros(1, 4, 32, 32))

    def test_indivisible_dims_name_the_dim(self):
        net = build_network(NetworkSpec(arch_id="unet", **SMALL))
        with pytest.raises(ShapeError, match="height 40"):
            net(torch.zeros(1, 3, 40, 32))
        with pytest.raises(ShapeError, match="width 20"):
            net(torch.zeros(1, 3, 32, 20))


class TestInitialization:
    @pytest.mark.parametrize("arch", ARCHS)
    def test_same_seed_is_bitwise_equal(self, arch):
        a = build_network(NetworkSpec(arch_id=arch, seed=11, **SMALL))
        b = build_network(NetworkSpec(arch_id=arch, seed=11, **SMALL))
        sa, sb = a.state_dict(), b.state_dict()
        assert list(sa) == list(sb)
        assert all(torch.equal(sa[k], sb[k]) for k in sa)

    def test_different_seeds_differ(self):
        a = build_network(NetworkSpec(arch_id="unet", seed=0, **SMALL))
        b = build_network(NetworkSpec(arch_id="unet", seed=1, **SMALL))
        assert any(
            not torch.equal(p, q)
            for p, q in zip(a.state_dict().values(), b.state_dict().values())
        )

    def test_build_does_not_disturb_global_rng(self):
        torch.manual_seed(99)
        expected = torch.randn(4)
        torch.manual_seed(99)
        build_network(NetworkSpec(arch_id="unet", seed=5, **SMALL))
        assert torch.equal(torch.randn(4), expected)


class TestTraining:
    def test_one_step_on_one_sample_touches_every_parameter_group(self):
        from divseg.loss import dice_loss_tensor

        net = build_network(NetworkSpec(arch_id="unet", **SMALL))
        before = {k: v.clone() for k, v in net.state_dict().items()}
        optimizer = torch.optim.Adam(net.parameters(), lr=1e-3)
        x = torch.randn(1, 3, 32, 32)
        t = (torch.rand(1, 32, 32) > 0.5).long()
        probs = torch.softmax(net(x), dim=1)
        loss = dice_loss_tensor(probs, t)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        after = net.state_dict()
        for group, _ in net.named_children():
            deltas = [
                (after[k] - before[k]).abs().max().item()
                for k in after
                if k.startswith(f"{group}.") and after[k].dtype.is_floating_point
            ]
            assert max(deltas) > 0.0, f"no parameter changed in group {group!r}"


class TestBatchConversion:
    def test_round_trip_shapes(self):
        rng = np.random.default_rng(0)
        images = [ImageTensor(rng.uniform(size=(8, 8, 3))) for _ in range(3)]
        batch = images_to_batch(images)
        assert batch.shape == (3, 3, 8, 8)
        assert batch.dtype == torch.float32
        logits = batch_to_logitmaps(torch.randn(3, 2, 8, 8))
        assert len(logits) == 3 and logits[0].classes == 2

    def test_mixed_shapes_rejected(self):
        rng = np.random.default_rng(1)
        images = [
            ImageTensor(rng.uniform(size=(8, 8, 3))),
            ImageTensor(rng.uniform(size=(4, 4, 3))),
        ]
        with pytest.raises(ShapeError):
            images_to_batch(images)

    def test_empty_batch_rejected(self):
        with pytest.raises(InvalidInputError):
            images_to_batch([])
