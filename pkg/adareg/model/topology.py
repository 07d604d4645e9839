"""
Model Topology Module
Desk-scale re-identification network: shared backbone, a global branch and a
regional branch with its own copy of the final block, stripe slicing,
reduction convolutions and one objective module per branch output.

Registration order (which fixes every parameter summation order):
backbone blocks, global final block, global head, regional final block, then
per stripe its reduction conv and head.
"""

from dataclasses import dataclass
from typing import Dict, List, Optional, Union

import numpy as np

from adareg.autodiff import ops
from adareg.autodiff.tensor import ParameterRegistry, Tensor
from adareg.config.run_config import ModelConfig, RegConfig
from adareg.nn.layers import BatchNorm, ClipLayer, Conv2D, DenseLayer, conv2d_forward, gap_forward
from adareg.regularization.factors import RegFactor, build_factors
from adareg.utils.exceptions import ShapeError, ValidationError
from adareg.utils.logger import setup_logger

logger = setup_logger('Model')


class ConvBlock:
    """conv3x3 (pad 1, bias) -> batch norm -> relu -> 2x2 average pool."""

    def __init__(self, in_channels: int, out_channels: int, cfg: ModelConfig, rng: np.random.Generator):
        self.conv = Conv2D(in_channels, out_channels, 3, pad=1, bias=True, rng=rng,
                           bias_init=cfg.conv_bias_init, bias_std=cfg.conv_bias_std)
        self.bn = BatchNorm(out_channels, momentum=cfg.bn_momentum, epsilon=cfg.bn_eps)

    def register(self, registry: ParameterRegistry, prefix: str) -> None:
        self.conv.register(registry, f"{prefix}.conv")
        self.bn.register(registry, f"{prefix}.bn")

    def __call__(self, x: Tensor) -> Tensor:
        z = conv2d_forward(self.conv, x, add_bias=False)
        return ops.avg_pool2d(ops.relu(self.bn(z, shift=self.conv.bias)), 2)


@dataclass
class ObjectiveOutput:
    name: str
    embedding: Tensor
    logits: Tensor


class ObjectiveModule:
    """gap -> clip -> (embedding) -> batch norm -> bias-free classifier."""

    def __init__(self, channels: int, num_classes: int, cfg: ModelConfig, rng: np.random.Generator):
        self.clip = ClipLayer(cfg.clip_lo, cfg.clip_hi) if cfg.clipping else None
        self.bn = BatchNorm(channels, momentum=cfg.bn_momentum, epsilon=cfg.bn_eps)
        self.classifier = DenseLayer(channels, num_classes, bias=False, rng=rng,
                                     init_std=cfg.classifier_init_std)

    def register(self, registry: ParameterRegistry, prefix: str) -> None:
        self.bn.register(registry, f"{prefix}.bn")
        self.classifier.register(registry, f"{prefix}.classifier")

    def embed(self, feature_map: Tensor) -> Tensor:
        pooled = gap_forward(feature_map)
        return self.clip(pooled) if self.clip is not None else pooled


def objective_forward(module: ObjectiveModule, feature_map: Tensor, name: str = '') -> ObjectiveOutput:
    """Embedding (pre batch norm) for the triplet loss and logits for cross-entropy."""
    if feature_map.ndim != 4 or feature_map.shape[2] < 1 or feature_map.shape[3] < 1:
        raise ShapeError(f"objective module needs a non-empty NCHW map, got {feature_map.shape}")
    embedding = module.embed(feature_map)
    logits = module.classifier(module.bn(embedding))
    return ObjectiveOutput(name, embedding, logits)


def slice_stripes(feature_map: Tensor, n: int = 2) -> List[Tensor]:
    """Split a feature map into ``n`` contiguous horizontal stripes, top first."""
    if n < 1:
        raise ValidationError(f"stripe count must be >= 1, got {n}")
    height = feature_map.shape[2]
    if height % n:
        raise ShapeError(f"feature map height {height} is not divisible into {n} stripes")
    step = height // n
    return [ops.slice_axis(feature_map, 2, i * step, (i + 1) * step) for i in range(n)]


class ReIDModel:
    """Parameter container for the full topology plus its regularization factors."""

    def __init__(self, cfg: ModelConfig, num_classes: int, rng: Optional[np.random.Generator] = None):
        if num_classes < 1:
            raise ValidationError(f"number of identities must be >= 1, got {num_classes}")
        rng = rng if rng is not None else np.random.default_rng(0)
        depth = len(cfg.channels)
        factor = 2 ** depth
        if cfg.input_height % factor or cfg.input_width % factor:
            raise ShapeError(
                f"input {cfg.input_height}x{cfg.input_width} is not divisible by {factor} "
                f"({depth} pooling blocks)")
        final_height = cfg.input_height // factor
        if cfg.regional_branches and final_height % cfg.stripes:
            raise ShapeError(
                f"final feature map height {final_height} is not divisible into {cfg.stripes} stripes")

        self.cfg = cfg
        self.num_classes = num_classes
        self.registry = ParameterRegistry()
        self.factors: List[RegFactor] = []
        self.mode = 'train'

        in_channels = 1
        self.backbone: List[ConvBlock] = []
        for out_channels in cfg.channels[:-1]:
            self.backbone.append(ConvBlock(in_channels, out_channels, cfg, rng))
            in_channels = out_channels
        last = cfg.channels[-1]
        self.global_final = ConvBlock(in_channels, last, cfg, rng)
        self.global_head = ObjectiveModule(last, num_classes, cfg, rng)

        self.regional_final: Optional[ConvBlock] = None
        self.reducers: List[Conv2D] = []
        self.stripe_heads: List[ObjectiveModule] = []
        if cfg.regional_branches:
            self.regional_final = ConvBlock(in_channels, last, cfg, rng)
            for _ in range(cfg.stripes):
                self.reducers.append(Conv2D(last, cfg.reduction_channels, 1, bias=True, rng=rng,
                                            bias_init=cfg.conv_bias_init, bias_std=cfg.conv_bias_std))
                self.stripe_heads.append(ObjectiveModule(cfg.reduction_channels, num_classes, cfg, rng))

        for i, block in enumerate(self.backbone, start=1):
            block.register(self.registry, f"backbone.block{i}")
        self.global_final.register(self.registry, "global.final")
        self.global_head.register(self.registry, "global.head")
        if self.regional_final is not None:
            self.regional_final.register(self.registry, "regional.final")
            for i, (reducer, head) in enumerate(zip(self.reducers, self.stripe_heads), start=1):
                reducer.register(self.registry, f"regional.stripe{i}.reduce")
                head.register(self.registry, f"regional.stripe{i}.head")

    @classmethod
    def build(cls, model_cfg: ModelConfig, reg_cfg: RegConfig, num_classes: int,
              rng: Optional[np.random.Generator] = None) -> 'ReIDModel':
        """Construct the network and attach one factor per regularized array."""
        model = cls(model_cfg, num_classes, rng)
        model.factors = build_factors(model.registry, reg_cfg.amplitude, reg_cfg.half_width,
                                      reg_cfg.theta_init, reg_cfg.map_dense_bias)
        logger.debug(f"Built model with {len(model.registry.regularized())} regularized arrays "
                     f"and {len(model.factors)} factors")
        return model

    @property
    def embedding_dim(self) -> int:
        return self.cfg.channels[-1] + len(self.stripe_heads) * self.cfg.reduction_channels

    def batchnorms(self) -> Dict[str, BatchNorm]:
        """Every batch norm layer keyed by its registry prefix, in registration order."""
        layers: Dict[str, BatchNorm] = {}
        for i, block in enumerate(self.backbone, start=1):
            layers[f"backbone.block{i}.bn"] = block.bn
        layers["global.final.bn"] = self.global_final.bn
        layers["global.head.bn"] = self.global_head.bn
        if self.regional_final is not None:
            layers["regional.final.bn"] = self.regional_final.bn
            for i, head in enumerate(self.stripe_heads, start=1):
                layers[f"regional.stripe{i}.head.bn"] = head.bn
        return layers

    def set_mode(self, mode: str) -> None:
        if mode not in ('train', 'infer'):
            raise ValidationError(f"unknown model mode '{mode}'")
        self.mode = mode
        for bn in self.batchnorms().values():
            bn.mode = mode


def model_forward(model: ReIDModel, images: Union[np.ndarray, Tensor],
                  mode: str = 'train') -> Union[List[ObjectiveOutput], Tensor]:
    """Run the network.

    Returns:
        train mode: one ObjectiveOutput per objective module (global first, then stripes).
        infer mode: the concatenated pre-batch-norm embedding [global | stripe1 | ...].
    """
    x = images if isinstance(images, Tensor) else Tensor(images)
    cfg = model.cfg
    expected = (1, cfg.input_height, cfg.input_width)
    if x.ndim != 4 or x.shape[1:] != expected:
        raise ShapeError(f"model expects N x {expected[0]} x {expected[1]} x {expected[2]} images, got {x.shape}")
    model.set_mode(mode)

    shared = x
    for block in model.backbone:
        shared = block(shared)
    outputs = [objective_forward(model.global_head, model.global_final(shared), 'global')]
    if model.regional_final is not None:
        regional = model.regional_final(shared)
        stripes = slice_stripes(regional, cfg.stripes)
        for i, (stripe, reducer, head) in enumerate(zip(stripes, model.reducers, model.stripe_heads), start=1):
            outputs.append(objective_forward(head, reducer(stripe), f"stripe{i}"))

    if mode == 'train':
        return outputs
    return ops.concat([o.embedding for o in outputs], axis=1)


def extract_embeddings(model: ReIDModel, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Inference embeddings for a stack of images, in input order."""
    chunks = []
    for start in range(0, len(images), batch_size):
        chunks.append(model_forward(model, images[start:start + batch_size], mode='infer').data)
    if not chunks:
        return np.zeros((0, model.embedding_dim))
    return np.concatenate(chunks, axis=0)
