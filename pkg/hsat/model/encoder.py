from collections import OrderedDict
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterator, Mapping, Optional, Tuple

import numpy as np
from logzero import logger

from hsat.exceptions import ConfigurationError, NumericError
from hsat.tensor_engine import ops
from hsat.tensor_engine.tensor import ShapeError, Tensor


class EncoderConfigError(ConfigurationError):
    pass


class DegenerateEmbeddingError(NumericError):
    pass


class Architecture(Enum):
    CONV = 'conv'
    MLP = 'mlp'


@dataclass(frozen=True)
class EncoderConfig:
    input_shape: Tuple[int, int, int] = (3, 32, 32)
    conv_channels: Tuple[int, ...] = (16, 32, 64)
    backbone_dim: int = 128
    projection_dim: int = 128
    architecture: Architecture = Architecture.CONV

    def __post_init__(self):
        object.__setattr__(self, 'input_shape', tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, 'conv_channels', tuple(int(v) for v in self.conv_channels))
        if not isinstance(self.architecture, Architecture):
            try:
                object.__setattr__(self, 'architecture', Architecture(self.architecture))
            except ValueError:
                raise EncoderConfigError(f'model.architecture: unknown architecture "{self.architecture}"')

    def validate(self) -> 'EncoderConfig':
        if len(self.input_shape) != 3 or any(v <= 0 for v in self.input_shape):
            raise EncoderConfigError(f'model.input_shape: expected three positive extents, got {self.input_shape}')
        if any(v <= 0 for v in self.conv_channels):
            raise EncoderConfigError(f'model.conv_channels: must be positive, got {self.conv_channels}')
        if self.backbone_dim <= 0 or self.projection_dim <= 0:
            raise EncoderConfigError('model.backbone_dim and model.projection_dim must be positive')
        if self.architecture == Architecture.CONV:
            if not self.conv_channels:
                raise EncoderConfigError('model.conv_channels: the conv architecture needs at least one stage')
            factor = 2 ** len(self.conv_channels)
            _, height, width = self.input_shape
            if height % factor or width % factor:
                raise EncoderConfigError(
                    f'model.input_shape: height and width must be divisible by {factor} '
                    f'for {len(self.conv_channels)} pooling stages, got {self.input_shape}')
        return self

    def param_shapes(self) -> 'OrderedDict[str, Tuple[int, ...]]':
        shapes = OrderedDict()
        channels, height, width = self.input_shape
        if self.architecture == Architecture.CONV:
            previous = channels
            for i, width_out in enumerate(self.conv_channels):
                shapes[f'backbone.conv{i}.weight'] = (width_out, previous, 3, 3)
                shapes[f'backbone.conv{i}.bias'] = (width_out,)
                previous = width_out
            factor = 2 ** len(self.conv_channels)
            flat = previous * (height // factor) * (width // factor)
        else:
            flat = channels * height * width
            for i, width_out in enumerate(self.conv_channels):
                shapes[f'backbone.fc{i}.weight'] = (flat, width_out)
                shapes[f'backbone.fc{i}.bias'] = (width_out,)
                flat = width_out
        shapes['backbone.dense.weight'] = (flat, self.backbone_dim)
        shapes['backbone.dense.bias'] = (self.backbone_dim,)
        shapes['head.fc1.weight'] = (self.backbone_dim, self.backbone_dim)
        shapes['head.fc1.bias'] = (self.backbone_dim,)
        shapes['head.fc2.weight'] = (self.backbone_dim, self.projection_dim)
        shapes['head.fc2.bias'] = (self.projection_dim,)
        return shapes

    def to_json(self) -> dict:
        return {
            'input_shape': list(self.input_shape),
            'conv_channels': list(self.conv_channels),
            'backbone_dim': self.backbone_dim,
            'projection_dim': self.projection_dim,
            'architecture': self.architecture.value,
        }

    @staticmethod
    def from_json(property_values: dict) -> 'EncoderConfig':
        return EncoderConfig(**property_values).validate()


class ModelParams:
    """Named parameter arrays of one encoder, plus the config and seed they were built from."""

    def __init__(self, config: EncoderConfig, arrays: Mapping[str, np.ndarray], seed: Optional[int] = None):
        expected = config.param_shapes()
        if list(arrays) != list(expected):
            raise EncoderConfigError(f'Parameter names {list(arrays)} do not match config layout {list(expected)}')
        self._arrays = OrderedDict()
        for name, shape in expected.items():
            array = np.array(arrays[name], dtype=np.float64)
            if array.shape != shape:
                raise EncoderConfigError(f'Parameter {name} has shape {array.shape}, config expects {shape}')
            array.flags.writeable = False
            self._arrays[name] = array
        self._config = config
        self._seed = seed

    @property
    def config(self) -> EncoderConfig:
        return self._config

    @property
    def seed(self) -> Optional[int]:
        return self._seed

    @property
    def names(self) -> Tuple[str, ...]:
        return tuple(self._arrays)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._arrays)

    def items(self):
        return self._arrays.items()

    def count(self) -> int:
        return int(sum(array.size for array in self._arrays.values()))

    def replace(self, arrays: Mapping[str, np.ndarray]) -> 'ModelParams':
        return ModelParams(self._config, arrays, self._seed)


def init_params(config: EncoderConfig, seed: int) -> ModelParams:
    """Kaiming-uniform weights and zero biases, drawn in parameter-name order."""
    config.validate()
    rng = np.random.default_rng(seed)
    arrays = OrderedDict()
    for name, shape in config.param_shapes().items():
        if name.endswith('.bias'):
            arrays[name] = np.zeros(shape)
            continue
        fan_in = int(np.prod(shape[1:])) if len(shape) == 4 else shape[0]
        bound = np.sqrt(6.0 / fan_in)
        arrays[name] = rng.uniform(-bound, bound, size=shape)
    params = ModelParams(config, arrays, seed)
    logger.debug(f'Initialized {config.architecture.value} encoder with {params.count()} parameters (seed {seed})')
    return params


class Encoder:
    """Forward pass of f_theta over a ModelParams snapshot.

    With trainable=False the parameters enter the graph as constants, so only the
    input can receive gradients.
    """

    def __init__(self, params: ModelParams, *, trainable: bool = False):
        self._params = params
        self._trainable = trainable
        self._weights = OrderedDict(
            (name, Tensor(array, requires_grad=trainable)) for name, array in params.items())

    @property
    def params(self) -> ModelParams:
        return self._params

    @property
    def weights(self) -> Mapping[str, Tensor]:
        return self._weights

    def _dense(self, h: Tensor, prefix: str) -> Tensor:
        return ops.add(ops.matmul(h, self._weights[f'{prefix}.weight']), self._weights[f'{prefix}.bias'])

    def embed_backbone(self, x) -> Tensor:
        x = ops.as_tensor(x)
        config = self._params.config
        if x.ndim != 4 or x.shape[1:] != config.input_shape:
            raise ShapeError(f'embed_backbone: expected N x {config.input_shape}, got {x.shape}')
        n = x.shape[0]
        if config.architecture == Architecture.CONV:
            h = x
            for i in range(len(config.conv_channels)):
                h = ops.conv2d(h, self._weights[f'backbone.conv{i}.weight'], self._weights[f'backbone.conv{i}.bias'])
                h = ops.avgpool2d(ops.relu(h))
            h = ops.reshape(h, (n, int(np.prod(h.shape[1:]))))
        else:
            h = ops.reshape(x, (n, int(np.prod(config.input_shape))))
            for i in range(len(config.conv_channels)):
                h = ops.relu(self._dense(h, f'backbone.fc{i}'))
        return self._dense(h, 'backbone.dense')

    def project(self, features) -> Tensor:
        features = ops.as_tensor(features)
        out = self._dense(ops.relu(self._dense(features, 'head.fc1')), 'head.fc2')
        norms = np.linalg.norm(out.data, axis=-1)
        if np.any(norms == 0):
            rows = np.flatnonzero(norms == 0).tolist()
            raise DegenerateEmbeddingError(f'project: zero-norm projection for rows {rows}')
        return ops.l2_normalize(out)

    def __call__(self, x) -> Tensor:
        return self.project(self.embed_backbone(x))

    def gradients(self) -> Dict[str, np.ndarray]:
        return OrderedDict(
            (name, tensor.grad if tensor.grad is not None else np.zeros(tensor.shape))
            for name, tensor in self._weights.items())


def embed_backbone(params: ModelParams, x) -> Tensor:
    return Encoder(params).embed_backbone(x)


def project(params: ModelParams, features) -> Tensor:
    return Encoder(params).project(features)
