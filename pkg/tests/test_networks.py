import pytest
import torch
from monai.networks.nets import DynUNet, ResNet

from pdacascade.errors import ModelStateError
from pdacascade.networks import ResNetBackbone, ResponseClassifier, SegUNet, SliceNet


def test_slice_net_one_logit_per_slice():
    model = SliceNet(encoder_channels=(4, 8), hidden=6)
    assert model(torch.rand(2, 7, 16, 16)).shape == (2, 7)
    bidirectional = SliceNet(encoder_channels=(4,), hidden=6, bidirectional=True)
    assert bidirectional(torch.rand(1, 3, 8, 8)).shape == (1, 3)


def test_seg_unet_is_a_dynunet_keeping_shape():
    model = SegUNet(1, (4, 8, 16), 3)
    assert isinstance(model, DynUNet)
    assert model.divisor == 4
    assert model(torch.rand(1, 1, 8, 12, 16)).shape == (1, 3, 8, 12, 16)


def test_seg_encoder_is_the_downsampling_path():
    model = SegUNet(1, (4, 8, 16), 3)
    encoder = model.encoder
    assert encoder.input_block is model.input_block
    assert encoder.bottleneck is model.bottleneck
    assert len(encoder.downsamples) == 1
    assert (encoder.in_channels, encoder.out_channels) == (1, 16)
    assert encoder(torch.rand(1, 1, 8, 8, 8)).shape == (1, 16, 2, 2, 2)

    state = model.state_dict()
    for name, tensor in encoder.state_dict().items():
        assert name.split(".")[0] in ("input_block", "downsamples", "bottleneck")
        assert torch.equal(tensor, state[name])


def test_resnet_backbone_pools_features():
    backbone = ResNetBackbone(4, "basic", (1, 1, 1, 1), (4, 8, 8, 16))
    assert isinstance(backbone, ResNet)
    assert backbone.fc is None
    assert backbone.out_channels == 16
    assert backbone(torch.rand(2, 4, 16, 16, 16)).shape == (2, 16)
    assert ResNetBackbone(1, "bottleneck", (1, 1, 1, 1), (4, 4, 4, 8)).out_channels == 32


def test_classifier_on_resnet():
    model = ResponseClassifier(ResNetBackbone(4, "basic", (1, 1, 1, 1), (4, 4, 8, 8)), in_channels=4)
    assert model.adapter is None
    assert model.embedding_width == 8
    x = torch.rand(3, 4, 16, 16, 16)
    assert model.embed(x).shape == (3, 8)
    assert model(x).shape == (3,)


def test_classifier_adapter_passes_intensity_channel():
    model = ResponseClassifier(SegUNet(1, (4, 8, 16), 3).encoder, in_channels=4)
    assert model.adapter is not None
    assert model.embedding_width == 16
    x = torch.rand(1, 4, 4, 4, 4)
    assert torch.equal(model.adapter(x), x[:, :1])


def test_trained_flag_is_saved():
    model = SegUNet(1, (4, 8, 16), 3)
    with pytest.raises(ModelStateError):
        model.check_trained()
    model.mark_trained()
    model.check_trained()
    reloaded = SegUNet(1, (4, 8, 16), 3)
    reloaded.load_state_dict(model.state_dict())
    reloaded.check_trained()


def test_reset_head_only_touches_head():
    torch.manual_seed(0)
    model = ResponseClassifier(ResNetBackbone(1, "basic", (1, 1, 1, 1), (4, 4, 4, 4)), in_channels=1)
    backbone = {k: v.clone() for k, v in model.backbone.state_dict().items()}
    head = model.head.weight.detach().clone()
    model.reset_head()
    assert not torch.equal(model.head.weight, head)
    for name, tensor in model.backbone.state_dict().items():
        assert torch.equal(tensor, backbone[name])
