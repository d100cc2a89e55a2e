"""
The composed classifier: three conv → ReLU → 2x2 pool stages, flatten,
one logit unit and a sigmoid.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np

from src.config import TrainConfig
from src.modules.layers import (
    ConvSpec,
    ConvTrace,
    PoolTrace,
    conv2d_backward,
    conv2d_forward,
    flatten,
    logit_head_backward,
    logit_head_forward,
    maxpool2x2_backward,
    maxpool2x2_forward,
    relu_backward,
    relu_forward,
    sigmoid,
    unflatten,
)
from src.modules.tensor import DTYPE, Rng
from src.utils.errors import ArchitectureMismatchError, ShapeMismatchError, TensorError

CONV_NAMES = ("conv1", "conv2", "conv3")
PARAM_NAMES = (
    "conv1.weights", "conv1.bias",
    "conv2.weights", "conv2.bias",
    "conv3.weights", "conv3.bias",
    "head.weights", "head.bias",
)


def expected_shapes(config: TrainConfig) -> Dict[str, Tuple[int, ...]]:
    """Parameter shapes of the architecture described by config, by name."""
    shapes: Dict[str, Tuple[int, ...]] = {}
    in_channels = config.channels
    for name, kernel in zip(CONV_NAMES, config.kernel_sizes):
        shapes[f"{name}.weights"] = (config.filters, in_channels, kernel, kernel)
        shapes[f"{name}.bias"] = (config.filters,)
        in_channels = config.filters
    shapes["head.weights"] = (config.architecture().head_length,)
    shapes["head.bias"] = (1,)
    return shapes


@dataclass
class ModelParams:
    """Learnable tensors of the classifier, with fixed names and order."""

    conv1: ConvSpec
    conv2: ConvSpec
    conv3: ConvSpec
    head_weights: np.ndarray
    head_bias: np.ndarray

    @property
    def convs(self) -> Tuple[ConvSpec, ConvSpec, ConvSpec]:
        return self.conv1, self.conv2, self.conv3

    @property
    def dtype(self):
        return self.head_weights.dtype

    def named_tensors(self) -> Dict[str, np.ndarray]:
        """The parameter arrays themselves (not copies), in PARAM_NAMES order."""
        named: Dict[str, np.ndarray] = {}
        for name, spec in zip(CONV_NAMES, self.convs):
            named[f"{name}.weights"] = spec.weights
            named[f"{name}.bias"] = spec.bias
        named["head.weights"] = self.head_weights
        named["head.bias"] = self.head_bias
        return named

    @classmethod
    def from_named(cls, named: Mapping[str, np.ndarray]) -> "ModelParams":
        missing = [name for name in PARAM_NAMES if name not in named]
        if missing:
            raise ArchitectureMismatchError(missing[0], None, None)
        extra = [name for name in named if name not in PARAM_NAMES]
        if extra:
            raise ArchitectureMismatchError(extra[0], None, np.shape(named[extra[0]]))
        convs = [
            ConvSpec(weights=named[f"{name}.weights"], bias=named[f"{name}.bias"])
            for name in CONV_NAMES
        ]
        return cls(*convs, head_weights=named["head.weights"], head_bias=named["head.bias"])

    @classmethod
    def initialize(cls, config: TrainConfig, rng: Rng, dtype=DTYPE) -> "ModelParams":
        """He-uniform weights drawn in PARAM_NAMES order, zero biases."""
        named = {}
        for name, shape in expected_shapes(config).items():
            if name.endswith(".bias"):
                named[name] = np.zeros(shape, dtype=dtype)
            else:
                fan_in = int(np.prod(shape[1:])) if len(shape) == 4 else shape[0]
                named[name] = rng.init_weights(shape, fan_in, dtype=dtype)
        return cls.from_named(named)

    @classmethod
    def zeros(cls, config: TrainConfig, dtype=DTYPE) -> "ModelParams":
        return cls.from_named({
            name: np.zeros(shape, dtype=dtype) for name, shape in expected_shapes(config).items()
        })

    def astype(self, dtype) -> "ModelParams":
        return ModelParams.from_named({
            name: np.array(tensor, dtype=dtype, copy=True) for name, tensor in self.named_tensors().items()
        })

    def copy(self) -> "ModelParams":
        return self.astype(self.dtype)

    def zeros_like(self) -> "ModelParams":
        return ModelParams.from_named({
            name: np.zeros_like(tensor) for name, tensor in self.named_tensors().items()
        })

    def parameter_count(self) -> int:
        return sum(tensor.size for tensor in self.named_tensors().values())

    def check_architecture(self, config: TrainConfig) -> None:
        """Raise ArchitectureMismatchError naming the first tensor that does not fit config."""
        for name, shape in expected_shapes(config).items():
            actual = self.named_tensors()[name].shape
            if actual != shape:
                raise ArchitectureMismatchError(name, shape, actual)


@dataclass
class ForwardTrace:
    """Activations kept by model_forward for model_backward."""

    params: ModelParams
    conv_inputs: List[np.ndarray] = field(default_factory=list)
    pre_activations: List[np.ndarray] = field(default_factory=list)
    pools: List[PoolTrace] = field(default_factory=list)
    feature_shape: Tuple[int, ...] = ()
    features: Optional[np.ndarray] = None
    logits: Optional[np.ndarray] = None
    probabilities: Optional[np.ndarray] = None


def _check_input(batch: np.ndarray, params: ModelParams) -> None:
    if batch.ndim != 4:
        raise ShapeMismatchError(f"model expects a batch [N,C,H,W], got shape {batch.shape}")
    _, channels, height, width = batch.shape
    if channels != params.conv1.in_channels:
        raise ShapeMismatchError(f"model expects {params.conv1.in_channels} channels, got {channels}")
    if height != width:
        raise ShapeMismatchError(f"model expects square images, got {height}x{width}")

    size = height
    for spec in params.convs:
        size = size - spec.kernel_h + 1
        if size < 2:
            raise ShapeMismatchError(f"{height}px input is too small for this architecture")
        size //= 2
    head_length = params.conv3.out_channels * size * size
    if head_length != params.head_weights.shape[0]:
        raise ShapeMismatchError(
            f"{height}px input flattens to {head_length} features, head expects {params.head_weights.shape[0]}"
        )


def model_logits(batch: np.ndarray, params: ModelParams,
                 trace: Optional[ForwardTrace] = None) -> np.ndarray:
    """Pre-sigmoid outputs [N]; fills trace when one is given."""
    _check_input(batch, params)

    x = batch
    for spec in params.convs:
        pre = conv2d_forward(x, spec)
        pooled, pool_trace = maxpool2x2_forward(relu_forward(pre))
        if trace is not None:
            trace.conv_inputs.append(x)
            trace.pre_activations.append(pre)
            trace.pools.append(pool_trace)
        x = pooled

    features = flatten(x)
    logits = logit_head_forward(features, params.head_weights, params.head_bias)

    if trace is not None:
        trace.feature_shape = x.shape
        trace.features = features
        trace.logits = logits
    return logits


def model_forward(batch: np.ndarray, params: ModelParams,
                  keep_trace: bool = False) -> Tuple[np.ndarray, Optional[ForwardTrace]]:
    """
    Run the classifier on a batch.

    Args:
        batch: Images [N, C, S, S]
        params: Model parameters
        keep_trace: Keep the activations needed by model_backward

    Returns:
        (probabilities [N], trace or None)
    """
    trace = ForwardTrace(params=params) if keep_trace else None
    probabilities = sigmoid(model_logits(batch, params, trace))
    if trace is not None:
        trace.probabilities = probabilities
    return probabilities, trace


def model_backward_from_logits(trace: Optional[ForwardTrace], logit_grad: np.ndarray) -> ModelParams:
    """Gradients of all parameters given dL/dz for every sample of the batch."""
    if trace is None or trace.features is None:
        raise TensorError("model_backward needs the trace of a forward pass run with keep_trace=True")
    params = trace.params
    logit_grad = np.asarray(logit_grad, dtype=params.dtype)

    grads: Dict[str, np.ndarray] = {}
    d_features, grads["head.weights"], grads["head.bias"] = logit_head_backward(
        trace.features, params.head_weights, logit_grad
    )
    d = unflatten(d_features, trace.feature_shape)

    for index in reversed(range(len(CONV_NAMES))):
        name = CONV_NAMES[index]
        spec = params.convs[index]
        d = maxpool2x2_backward(trace.pools[index], d)
        d = relu_backward(trace.pre_activations[index], d)
        d, grads[f"{name}.weights"], grads[f"{name}.bias"] = conv2d_backward(
            ConvTrace(trace.conv_inputs[index], spec), d, input_grad=index > 0
        )

    return ModelParams.from_named(grads)


def model_backward(trace: Optional[ForwardTrace], prob_grad: np.ndarray) -> ModelParams:
    """Gradients of all parameters given dL/dp for every sample of the batch."""
    if trace is None or trace.probabilities is None:
        raise TensorError("model_backward needs the trace of a forward pass run with keep_trace=True")
    p = trace.probabilities
    return model_backward_from_logits(trace, np.asarray(prob_grad) * p * (1 - p))
