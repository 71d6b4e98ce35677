"""Architecture registry: how to build each supported backbone truncated

to its final convolutional feature map (the last activation before any
global pooling or classifier), plus the preprocessing its weights expect.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torchvision.models as tvm

from .errors import ExportError

IMAGENET_PREPROC = {"scale": "unit", "mean": [0.485, 0.456, 0.406], "std": [0.229, 0.224, 0.225]}

# torchvision's inception graph internally re-normalizes imagenet-style
# inputs to (v - 0.5) / 0.5; truncating below that step means the exported
# model wants the 0.5/0.5 normalization directly.
INCEPTION_PREPROC = {"scale": "unit", "mean": [0.5, 0.5, 0.5], "std": [0.5, 0.5, 0.5]}


@dataclass(frozen=True)
class BuiltBackbone:
    name: str
    module: nn.Module
    feature_dim: int
    preproc: dict


def _densenet(builder, weights_enum, name: str, pretrained: bool) -> BuiltBackbone:
    weights = weights_enum.IMAGENET1K_V1 if pretrained else None
    model = builder(weights=weights)
    # densenet applies relu between its feature stack and global pooling
    module = nn.Sequential(model.features, nn.ReLU())
    return BuiltBackbone(name, module.eval(), model.classifier.in_features, IMAGENET_PREPROC)


def _vgg(builder, weights_enum, name: str, pretrained: bool) -> BuiltBackbone:
    weights = weights_enum.IMAGENET1K_V1 if pretrained else None
    model = builder(weights=weights)
    return BuiltBackbone(name, model.features.eval(), 512, IMAGENET_PREPROC)


def _inception_v3(pretrained: bool) -> BuiltBackbone:
    if pretrained:
        model = tvm.inception_v3(weights=tvm.Inception_V3_Weights.IMAGENET1K_V1)
    else:
        model = tvm.inception_v3(weights=None, init_weights=False)
    # keep everything through the last mixed block; drop the aux head,
    # pooling and classifier (the input re-normalization step is bypassed
    # too, hence INCEPTION_PREPROC)
    children = dict(model.named_children())
    order = [n for n in children if n != "AuxLogits"]
    keep = order[: order.index("Mixed_7c") + 1]
    module = nn.Sequential(*[children[n] for n in keep])
    return BuiltBackbone("InceptionV3", module.eval(), 2048, INCEPTION_PREPROC)


_BUILDERS = {
    "densenet121": lambda p: _densenet(tvm.densenet121, tvm.DenseNet121_Weights, "DenseNet121", p),
    "densenet169": lambda p: _densenet(tvm.densenet169, tvm.DenseNet169_Weights, "DenseNet169", p),
    "densenet201": lambda p: _densenet(tvm.densenet201, tvm.DenseNet201_Weights, "DenseNet201", p),
    "vgg16": lambda p: _vgg(tvm.vgg16, tvm.VGG16_Weights, "VGG16", p),
    "vgg19": lambda p: _vgg(tvm.vgg19, tvm.VGG19_Weights, "VGG19", p),
    "inceptionv3": lambda p: _inception_v3(p),
}

# Recognized but not buildable from torchvision; kept so the error message
# distinguishes "not in the benchmark set" from "no source available".
KNOWN_UNAVAILABLE = {"xception": "no torchvision implementation of Xception is available"}

SUPPORTED_ARCHITECTURES = tuple(sorted(_BUILDERS))


def build_backbone(architecture: str, pretrained: bool = True) -> BuiltBackbone:
    """Instantiate a truncated backbone in eval mode with frozen weights."""
    key = architecture.lower().replace("-", "").replace("_", "")
    if key in KNOWN_UNAVAILABLE:
        raise ExportError(f"unsupported architecture {architecture!r}: {KNOWN_UNAVAILABLE[key]}")
    if key not in _BUILDERS:
        raise ExportError(
            f"unknown architecture {architecture!r}; supported: "
            + ", ".join(SUPPORTED_ARCHITECTURES)
        )
    try:
        built = _BUILDERS[key](pretrained)
    except Exception as exc:
        raise ExportError(
            f"cannot build {architecture}: {exc} "
            "(pretrained weights need network access; try --no-pretrained)"
        ) from exc
    for param in built.module.parameters():
        param.requires_grad_(False)
    return built


@torch.no_grad()
def pooled_features(module: nn.Module, batch: torch.Tensor) -> torch.Tensor:
    """Global average pooling of the module's spatial output, (N, C)."""
    fmap = module(batch)
    if fmap.ndim != 4:
        raise ExportError(f"expected a rank-4 feature map, got shape {tuple(fmap.shape)}")
    return fmap.mean(dim=(2, 3))
