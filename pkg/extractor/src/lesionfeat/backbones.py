"""Backbone registry.

Every entry maps a name to a loader producing the convolutional trunk of a
torchvision model (outputting feature maps, before any pooling/classifier
head) plus that trunk's documented feature width. ResNet trunks end in a
ReLU, so their pooled features are nonnegative; EfficientNet trunks end in
SiLU, whose pooled features can dip below zero, so cohorts written from
them validate under the signed flag.
"""

import torch
from torchvision import models


def _resnet(builder, weights_enum):
    def load(weights):
        model = builder(weights=weights_enum.DEFAULT if weights == "pretrained" else None)
        return torch.nn.Sequential(*list(model.children())[:-2])

    return load


def _efficientnet(builder, weights_enum):
    def load(weights):
        model = builder(weights=weights_enum.DEFAULT if weights == "pretrained" else None)
        return model.features

    return load


# name -> (loader, feature width, pooled features provably nonnegative)
BACKBONES = {
    "resnet18": (_resnet(models.resnet18, models.ResNet18_Weights), 512, True),
    "resnet50": (_resnet(models.resnet50, models.ResNet50_Weights), 2048, True),
    "efficientnet_b0": (_efficientnet(models.efficientnet_b0, models.EfficientNet_B0_Weights), 1280, False),
    "efficientnet_b6": (_efficientnet(models.efficientnet_b6, models.EfficientNet_B6_Weights), 2304, False),
}


class BackboneError(ValueError):
    pass


def build_backbone(name, weights="pretrained", seed=0):
    """Return ``(trunk, feature_width, nonnegative)`` in inference mode.

    ``weights="pretrained"`` loads the torchvision weights (downloads on
    first use; raises a clear error when offline with an empty cache).
    ``weights="random"`` seeds torch and uses the default random
    initialization, which is deterministic per seed and useful offline.
    """
    if name not in BACKBONES:
        raise BackboneError(
            f"unknown backbone {name!r}; available: {', '.join(sorted(BACKBONES))}"
        )
    if weights not in ("pretrained", "random"):
        raise BackboneError(f"weights must be 'pretrained' or 'random', got {weights!r}")
    loader, width, nonneg = BACKBONES[name]
    if weights == "random":
        torch.manual_seed(seed)
    try:
        trunk = loader(weights)
    except Exception as exc:
        raise BackboneError(
            f"could not load {weights} weights for {name!r} "
            f"(offline without a cache? try --weights random): {exc}"
        ) from exc
    trunk.eval()
    for p in trunk.parameters():
        p.requires_grad_(False)
    return trunk, width, nonneg
