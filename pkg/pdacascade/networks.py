"""Torch modules for the three stages.

* :class:`SliceNet` - 2-D encoder + LSTM, one logit per slice
* :class:`SegUNet` - MONAI DynUNet; its ``encoder`` (input block, downsamples, bottleneck) is the transferable part
* :class:`ResponseClassifier` - global pooling + linear head over a MONAI ResNet or a transferred encoder
"""

import torch
from monai.networks.nets import DynUNet, ResNet
from monai.networks.nets.resnet import ResNetBlock, ResNetBottleneck
from torch import nn

from .errors import ModelStateError

BLOCK_EXPANSION = {"basic": ResNetBlock.expansion, "bottleneck": ResNetBottleneck.expansion}


class TrainedFlag(nn.Module):
    """Mixin keeping a ``trained`` buffer, saved with the state dict."""

    def _init_flag(self):
        self.register_buffer("trained", torch.zeros((), dtype=torch.bool))

    def mark_trained(self):
        self.trained.fill_(True)

    def check_trained(self):
        if not bool(self.trained):
            raise ModelStateError(type(self).__name__)


def _conv_block(conv, norm, in_channels, out_channels, stride):
    return nn.Sequential(
        conv(in_channels, out_channels, kernel_size=3, stride=stride, padding=1),
        norm(out_channels, affine=True),
        nn.LeakyReLU(0.01, inplace=True),
        conv(out_channels, out_channels, kernel_size=3, stride=1, padding=1),
        norm(out_channels, affine=True),
        nn.LeakyReLU(0.01, inplace=True),
    )


class SliceNet(TrainedFlag):
    """2.5-D slice classifier.

    Each slice goes through a shared 2-D encoder; the feature sequence is read in ascending
    z by an LSTM and mapped to one logit per slice. Works for any number of slices.

    :param tuple[int] encoder_channels: Widths of the 2-D stages (each halves y/x)
    :param int hidden: LSTM hidden width
    :param bool bidirectional: Run the LSTM both ways
    """

    def __init__(self, encoder_channels=(16, 32, 64), hidden=64, bidirectional=False):
        super().__init__()
        self._init_flag()
        layers, in_channels = [], 1
        for c in encoder_channels:
            layers.append(_conv_block(nn.Conv2d, nn.InstanceNorm2d, in_channels, c, stride=2))
            in_channels = c
        layers.append(nn.AdaptiveAvgPool2d(1))
        layers.append(nn.Flatten())
        self.encoder = nn.Sequential(*layers)
        self.sequence = nn.LSTM(in_channels, hidden, batch_first=True, bidirectional=bidirectional)
        self.head = nn.Linear(hidden * (2 if bidirectional else 1), 1)

    def forward(self, x):
        """:param torch.Tensor x: (B, Z, Y, X) slices. :returns: (B, Z) logits"""
        b, z, y, w = x.shape
        features = self.encoder(x.reshape(b * z, 1, y, w)).reshape(b, z, -1)
        out, _ = self.sequence(features)
        return self.head(out).squeeze(-1)


class SegEncoder(nn.Module):
    """Downsampling path of a :class:`SegUNet`: its input block, downsamples and bottleneck.

    Holds the segmentation model's own modules, so its state dict keys are the model's.
    ``forward`` returns the bottleneck feature map.
    """

    def __init__(self, input_block, downsamples, bottleneck, in_channels, out_channels):
        super().__init__()
        self.input_block = input_block
        self.downsamples = downsamples
        self.bottleneck = bottleneck
        self.in_channels = in_channels
        self.out_channels = out_channels

    def forward(self, x):
        x = self.input_block(x)
        for block in self.downsamples:
            x = block(x)
        return self.bottleneck(x)


class SegUNet(TrainedFlag, DynUNet):
    """MONAI DynUNet with one stage per width; stage 0 keeps the resolution, every later stage halves it.

    Inputs must be divisible by :attr:`divisor` on every axis.

    :param int in_channels: Input channels
    :param tuple[int] channels: Stage widths, at least three
    :param int out_classes: Output classes
    """

    def __init__(self, in_channels=1, channels=(8, 16, 32, 64), out_classes=3):
        strides = [1] + [2] * (len(channels) - 1)
        super().__init__(spatial_dims=3, in_channels=in_channels, out_channels=out_classes,
                         kernel_size=[3] * len(channels), strides=strides, upsample_kernel_size=strides[1:],
                         filters=list(channels), norm_name=("instance", {"affine": True}))
        self._init_flag()
        self.input_channels = in_channels
        self.widths = tuple(channels)
        self.divisor = 2 ** (len(channels) - 1)

    @property
    def encoder(self):
        return SegEncoder(self.input_block, self.downsamples, self.bottleneck, self.input_channels, self.widths[-1])


class ResNetBackbone(ResNet):
    """MONAI 3-D ResNet without its classification layer; ``forward`` returns pooled features (B, D).

    The stem keeps the resolution and there is no max pooling, so three stride-2 stages follow.

    :param int in_channels: Input channels
    :param str block: ``"basic"`` or ``"bottleneck"``
    :param tuple[int] layers: Blocks per stage (four stages)
    :param tuple[int] block_inplanes: Stage widths (four stages)
    """

    def __init__(self, in_channels=1, block="basic", layers=(1, 1, 1, 1), block_inplanes=(16, 32, 64, 128)):
        super().__init__(block=block, layers=list(layers), block_inplanes=list(block_inplanes), spatial_dims=3,
                         n_input_channels=in_channels, conv1_t_size=3, conv1_t_stride=1, no_max_pool=True,
                         feed_forward=False, norm=("instance", {"affine": True}))
        self.in_channels = in_channels
        self.out_channels = block_inplanes[-1] * BLOCK_EXPANSION[block]


class ResponseClassifier(TrainedFlag):
    """Backbone, global average pooling (the embedding point) and a linear head to one logit.

    :param nn.Module backbone: :class:`ResNetBackbone` or :class:`SegEncoder`
    :param int in_channels: Channels of the classifier input
    """

    def __init__(self, backbone, in_channels):
        super().__init__()
        self._init_flag()
        self.in_channels = in_channels
        self.adapter = None
        backbone_in = getattr(backbone, "in_channels", in_channels)
        if backbone_in != in_channels:
            # Fresh 1x1x1 projection onto the encoder's input width, starting as "take channel 0".
            self.adapter = nn.Conv3d(in_channels, backbone_in, kernel_size=1)
            with torch.no_grad():
                self.adapter.weight.zero_()
                self.adapter.bias.zero_()
                for c in range(backbone_in):
                    self.adapter.weight[c, min(c, in_channels - 1)] = 1.0
        self.backbone = backbone
        self.pool = nn.AdaptiveAvgPool3d(1)
        self.head = nn.Linear(backbone.out_channels, 1)

    @property
    def embedding_width(self):
        return self.head.in_features

    def embed(self, x):
        """Representation after the feature extractor, before the linear head: (B, D)."""
        if self.adapter is not None:
            x = self.adapter(x)
        features = self.backbone(x)
        if features.ndim > 2:
            features = self.pool(features).flatten(1)
        return features

    def forward(self, x):
        return self.head(self.embed(x)).squeeze(-1)

    def reset_head(self):
        self.head.reset_parameters()
