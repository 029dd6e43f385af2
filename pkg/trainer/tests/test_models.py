import pytest
import torch

from martrain.models import DiscriminatorNet, GeneratorNet


class TestGenerator:
    def test_shape_preserved(self):
        g = GeneratorNet().eval()
        for shape in ((16, 16, 16), (24, 16, 32), (8, 8, 8)):
            x = torch.rand(1, 1, *shape)
            with torch.no_grad():
                assert g(x).shape == x.shape

    def test_training_needs_two_bottleneck_voxels(self):
        g = GeneratorNet().train()
        with pytest.raises(ValueError, match="training requires"):
            g(torch.rand(1, 1, 8, 8, 8))

    def test_output_in_unit_interval(self):
        g = GeneratorNet()
        y = g(torch.rand(1, 1, 16, 16, 16))
        assert float(y.min()) > 0.0
        assert float(y.max()) < 1.0

    def test_indivisible_dims_rejected(self):
        g = GeneratorNet()
        with pytest.raises(ValueError):
            g(torch.rand(1, 1, 12, 16, 16))

    def test_channel_cap(self):
        g = GeneratorNet(base_channels=16, depth=3, channel_cap=64)
        widths = [m.out_channels for m in g.modules() if isinstance(m, torch.nn.Conv3d)]
        assert max(widths) <= 64

    def test_seeded_construction_deterministic(self):
        torch.manual_seed(3)
        g1 = GeneratorNet()
        torch.manual_seed(3)
        g2 = GeneratorNet()
        x = torch.rand(1, 1, 16, 16, 16)
        g1.eval()
        g2.eval()
        with torch.no_grad():
            assert torch.equal(g1(x), g2(x))


class TestDiscriminator:
    def test_scalar_output_in_unit_interval(self):
        d = DiscriminatorNet()
        out = d(torch.rand(2, 1, 16, 16, 16))
        assert out.shape == (2,)
        assert float(out.min()) > 0.0
        assert float(out.max()) < 1.0

    def test_eight_conv_blocks(self):
        d = DiscriminatorNet()
        convs = [m for m in d.features if isinstance(m, torch.nn.Conv3d)]
        bns = [m for m in d.features if isinstance(m, torch.nn.BatchNorm3d)]
        assert len(convs) == 8
        assert len(bns) == 8
