"""Convolutional feature network producing conv5 activation grids.

The default is a 5-conv-layer architecture with the standard geometry
(7/2, 3/2 pool, 5/2 pad 1, 3/2 pool, then three 3/1 pad 1 layers), which
maps a 224x224 input to a 13x13x512 conv5 grid. The model identifier is
either "vgg-m-random" (architecture above with seeded random weights) or
a path to a torch state dict for the same architecture, so externally
trained weights can be dropped in.
"""

import torch
import torch.nn as nn

INPUT_SIDE = 224
CONV5_GRID = 13
CONV5_CHANNELS = 512

# mean pixel (RGB, 0..255 scale), the usual detection-pipeline constant
PIXEL_MEAN = (123.68, 116.779, 103.939)


def _conv_stack() -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(3, 96, kernel_size=7, stride=2),
        nn.ReLU(inplace=True),
        nn.MaxPool2d(kernel_size=3, stride=2),
        nn.Conv2d(96, 256, kernel_size=5, stride=2, padding=1),
        nn.ReLU(inplace=True),
        nn.MaxPool2d(kernel_size=3, stride=2, ceil_mode=True),
        nn.Conv2d(256, 512, kernel_size=3, stride=1, padding=1),
        nn.ReLU(inplace=True),
        nn.Conv2d(512, 512, kernel_size=3, stride=1, padding=1),
        nn.ReLU(inplace=True),
        nn.Conv2d(512, 512, kernel_size=3, stride=1, padding=1),
        nn.ReLU(inplace=True),
    )


class FeatureNetwork:
    """conv5 feature maps for batches of warped crops."""

    def __init__(self, model_id: str = "vgg-m-random", seed: int = 0):
        self.model_id = model_id
        if model_id == "vgg-m-random":
            torch.manual_seed(seed)
            self.net = _conv_stack()
        else:
            self.net = _conv_stack()
            state = torch.load(model_id, map_location="cpu", weights_only=True)
            self.net.load_state_dict(state)
        self.net.eval()
        mean = torch.tensor(PIXEL_MEAN).view(1, 3, 1, 1)
        self._mean = mean

    @torch.no_grad()
    def conv5(self, crops) -> "torch.Tensor":
        """`crops`: uint8 array (n, side, side, 3) -> (n, grid, grid, channels)."""
        x = torch.from_numpy(crops).float().permute(0, 3, 1, 2) - self._mean
        out = self.net(x)
        return out.permute(0, 2, 3, 1).contiguous()
