"""
Feed-forward Q-network with hand-written backpropagation.

Layers are [72, 576, 576, 576, 36, M_max] with ReLU on every hidden layer and
an identity output. Parameters are float64 numpy arrays; weight matrices are
stored (fan_in, fan_out) so a batch X of shape (B, fan_in) maps to X @ W + b.
"""

import json
import os
import tempfile
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from Block_Architect.data_model import Lexicon
from Block_Architect.utility import DEFAULT_M_MAX, NUM_PRIMITIVES, StrEnum

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
INPUT_SIZE = 72
HIDDEN_LAYERS = (576, 576, 576, 36)
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8


class CheckpointError(Exception):
    """Base class for checkpoint exceptions."""
    pass


class FormatVersionMismatch(CheckpointError):
    """Raised when a checkpoint was written by an unsupported format version."""
    pass


class DimensionMismatch(CheckpointError):
    """Raised when stored parameters do not fit the expected architecture."""
    pass


class OptimizerKind(StrEnum):
    SGD = "sgd"
    ADAM = "adam"


def architecture(m_max: int = DEFAULT_M_MAX, hidden: Sequence[int] = HIDDEN_LAYERS) -> List[int]:
    return [INPUT_SIZE, *hidden, m_max]


class QNetwork:
    """Affine + ReLU chain; identity on the output layer."""

    def __init__(self, weights: List[np.ndarray], biases: List[np.ndarray]) -> None:
        if len(weights) != len(biases) or not weights:
            raise DimensionMismatch("Every layer needs one weight matrix and one bias vector")
        for index, (w, b) in enumerate(zip(weights, biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise DimensionMismatch(f"Layer {index}: weight {w.shape} does not match bias {b.shape}")
            if index and weights[index - 1].shape[1] != w.shape[0]:
                raise DimensionMismatch(f"Layer {index} does not chain onto layer {index - 1}")
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]

    @property
    def layer_dims(self) -> List[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def output_size(self) -> int:
        return self.weights[-1].shape[1]

    def parameters(self) -> List[np.ndarray]:
        """Parameters in (W0, b0, W1, b1, ...) order."""
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def copy(self) -> 'QNetwork':
        return QNetwork([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.parameters())


@dataclass
class Gradients:
    weights: List[np.ndarray]
    biases: List[np.ndarray]

    def parameters(self) -> List[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]


@dataclass
class Optimizer:
    """SGD or bias-corrected Adam; moments are allocated lazily to match the network."""
    kind: OptimizerKind = OptimizerKind.ADAM
    learning_rate: float = 1e-4
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    epsilon: float = ADAM_EPSILON
    step: int = 0
    first_moment: List[np.ndarray] = field(default_factory=list, repr=False)
    second_moment: List[np.ndarray] = field(default_factory=list, repr=False)

    def to_json(self) -> Dict[str, Any]:
        return {
            'kind': str(self.kind),
            'learning_rate': self.learning_rate,
            'beta1': self.beta1,
            'beta2': self.beta2,
            'epsilon': self.epsilon,
            'step': self.step,
            'first_moment': [m.tolist() for m in self.first_moment],
            'second_moment': [v.tolist() for v in self.second_moment]
        }

    @classmethod
    def from_json(cls, data: Dict[str, Any]) -> 'Optimizer':
        return cls(
            kind=OptimizerKind(data['kind']),
            learning_rate=float(data['learning_rate']),
            beta1=float(data['beta1']),
            beta2=float(data['beta2']),
            epsilon=float(data['epsilon']),
            step=int(data['step']),
            first_moment=[np.array(m, dtype=np.float64) for m in data['first_moment']],
            second_moment=[np.array(v, dtype=np.float64) for v in data['second_moment']]
        )

    def copy(self) -> 'Optimizer':
        return Optimizer(
            self.kind, self.learning_rate, self.beta1, self.beta2, self.epsilon, self.step,
            [m.copy() for m in self.first_moment], [v.copy() for v in self.second_moment]
        )


def init_network(seed: int, m_max: int = DEFAULT_M_MAX, layer_dims: Optional[Sequence[int]] = None) -> QNetwork:
    """
    He-uniform initialization scaled by fan-in, zero biases, deterministic per seed.

    Args:
        seed (int): Seed of the parameter generator
        m_max (int): Output width (lexicon capacity), at least 12
        layer_dims (Optional[Sequence[int]]): Full layer list overriding the default architecture

    Returns:
        QNetwork: The initialized network
    """
    if layer_dims is None:
        if m_max < NUM_PRIMITIVES:
            raise ValueError(f"M_max must be at least {NUM_PRIMITIVES}")
        layer_dims = architecture(m_max)
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        limit = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return QNetwork(weights, biases)


def forward_cache(net: QNetwork, inputs: np.ndarray) -> Tuple[np.ndarray, List[np.ndarray]]:
    """Forward pass that also returns every layer's pre-activations for backward()."""
    activation = np.asarray(inputs, dtype=np.float64)
    cache = [activation]
    last = len(net.weights) - 1
    for index, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = activation @ w + b
        cache.append(z)
        activation = z if index == last else np.maximum(z, 0.0)
    return activation, cache


def forward(net: QNetwork, inputs: np.ndarray) -> np.ndarray:
    """
    Q-values for one input vector (72,) or a batch (B, 72).

    Returns:
        np.ndarray: Shape (M_max,) or (B, M_max)
    """
    output, _ = forward_cache(net, inputs)
    return output


def backward(
        net: QNetwork,
        inputs: np.ndarray,
        output_grad: np.ndarray,
        cache: Optional[List[np.ndarray]] = None
    ) -> Gradients:
    """
    Reverse-mode gradients of sum(output * output_grad) with respect to every parameter.

    Args:
        net (QNetwork): The network
        inputs (np.ndarray): Same input that produced the cache
        output_grad (np.ndarray): Upstream gradient, shaped like the output
        cache (Optional[List[np.ndarray]]): From forward_cache; recomputed when omitted

    Returns:
        Gradients: One array per weight matrix and bias vector
    """
    if cache is None:
        _, cache = forward_cache(net, inputs)
    inputs = cache[0]
    batched = inputs.ndim == 2
    delta = np.asarray(output_grad, dtype=np.float64)
    if not batched:
        delta = delta[np.newaxis, :]
    grad_w: List[np.ndarray] = [None] * len(net.weights)
    grad_b: List[np.ndarray] = [None] * len(net.weights)
    for index in range(len(net.weights) - 1, -1, -1):
        if index == 0:
            previous = inputs
        else:
            previous = np.maximum(cache[index], 0.0)
        if not batched:
            previous = previous[np.newaxis, :]
        grad_w[index] = previous.T @ delta
        grad_b[index] = delta.sum(axis=0)
        if index:
            pre_activation = cache[index] if batched else cache[index][np.newaxis, :]
            delta = (delta @ net.weights[index].T) * (pre_activation > 0.0)
    return Gradients(grad_w, grad_b)


def apply_update(net: QNetwork, optimizer: Optimizer, gradients: Gradients) -> QNetwork:
    """
    One optimizer step, applied in place.

    SGD: theta -= lr * g. Adam: bias-corrected moments with beta1, beta2, epsilon.
    """
    params = net.parameters()
    grads = gradients.parameters()
    if len(params) != len(grads) or any(p.shape != g.shape for p, g in zip(params, grads)):
        raise DimensionMismatch("Gradient shapes do not match the network")
    optimizer.step += 1
    if optimizer.kind == OptimizerKind.SGD:
        for p, g in zip(params, grads):
            p -= optimizer.learning_rate * g
        return net
    if not optimizer.first_moment:
        optimizer.first_moment = [np.zeros_like(p) for p in params]
        optimizer.second_moment = [np.zeros_like(p) for p in params]
    correction1 = 1.0 - optimizer.beta1 ** optimizer.step
    correction2 = 1.0 - optimizer.beta2 ** optimizer.step
    for p, g, m, v in zip(params, grads, optimizer.first_moment, optimizer.second_moment):
        m *= optimizer.beta1
        m += (1.0 - optimizer.beta1) * g
        v *= optimizer.beta2
        v += (1.0 - optimizer.beta2) * g * g
        p -= optimizer.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + optimizer.epsilon)
    return net


def network_to_json(net: QNetwork) -> Dict[str, Any]:
    return {
        'layer_dims': net.layer_dims,
        'weights': [w.tolist() for w in net.weights],
        'biases': [b.tolist() for b in net.biases]
    }


def network_from_json(data: Dict[str, Any], expected_dims: Optional[Sequence[int]] = None) -> QNetwork:
    """
    Rebuild a network from its JSON form.

    Raises:
        DimensionMismatch: If the stored dims differ from `expected_dims` or from the arrays
    """
    dims = [int(d) for d in data['layer_dims']]
    if expected_dims is not None and dims != list(expected_dims):
        raise DimensionMismatch(f"Checkpoint has layers {dims}, expected {list(expected_dims)}")
    weights = [np.array(w, dtype=np.float64) for w in data['weights']]
    biases = [np.array(b, dtype=np.float64) for b in data['biases']]
    if len(weights) != len(dims) - 1:
        raise DimensionMismatch(f"Checkpoint lists {len(weights)} weight matrices for layers {dims}")
    for index, w in enumerate(weights):
        if w.shape != (dims[index], dims[index + 1]):
            raise DimensionMismatch(f"Layer {index} weight has shape {w.shape}, dims say {dims[index:index + 2]}")
    return QNetwork(weights, biases)


def checkpoint_document(net: QNetwork, lexicon: Lexicon, optimizer: Optional[Optimizer] = None,
                        extra: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    document = {'version': CHECKPOINT_VERSION}
    document.update(network_to_json(net))
    document['optimizer_state'] = optimizer.to_json() if optimizer is not None else None
    document['lexicon'] = lexicon.to_json()
    if extra:
        document.update(extra)
    return document


def save_checkpoint(net: QNetwork, lexicon: Lexicon, path: str, optimizer: Optional[Optimizer] = None,
                    extra: Optional[Dict[str, Any]] = None) -> None:
    """
    Write a JSON checkpoint. The file is replaced only once the new document is
    complete. Floats are written with their shortest round-trip repr,
    so loading reproduces every parameter bit for bit.

    Args:
        net (QNetwork): Network to store
        lexicon (Lexicon): Lexicon embedded so abstractions survive restarts
        path (str): Destination file
        optimizer (Optional[Optimizer]): Optimizer moments and step counter
        extra (Optional[Dict[str, Any]]): Additional top-level fields (training state)
    """
    document = checkpoint_document(net, lexicon, optimizer, extra)
    handle = tempfile.NamedTemporaryFile(
        "w", encoding="utf-8", dir=os.path.dirname(os.path.abspath(path)),
        prefix=".checkpoint-", suffix=".tmp", delete=False
    )
    try:
        with handle:
            json.dump(document, handle, allow_nan=False)
    except BaseException:
        os.remove(handle.name)
        raise
    os.replace(handle.name, path)
    logger.info("Checkpoint written to %s", path)


def read_checkpoint(path: str) -> Dict[str, Any]:
    """
    Read and version-check a checkpoint document.

    Raises:
        FormatVersionMismatch: If the version field is not supported
        CheckpointError: If the file is not a checkpoint document
    """
    with open(path, "r", encoding="utf-8") as f:
        try:
            document = json.load(f)
        except json.JSONDecodeError as e:
            raise CheckpointError(f"{path} is not a checkpoint: {e}") from e
    if not isinstance(document, dict) or 'version' not in document:
        raise CheckpointError(f"{path} is not a checkpoint")
    if document['version'] != CHECKPOINT_VERSION:
        raise FormatVersionMismatch(
            f"{path} has checkpoint version {document['version']}, expected {CHECKPOINT_VERSION}"
        )
    return document


def load_checkpoint(path: str, expected_dims: Optional[Sequence[int]] = None) -> Tuple[QNetwork, Lexicon]:
    """
    Load the network and lexicon from a checkpoint.

    Raises:
        FormatVersionMismatch: On an unsupported version
        DimensionMismatch: If dims differ from `expected_dims` or the lexicon capacity
    """
    document = read_checkpoint(path)
    net = network_from_json(document, expected_dims)
    lexicon = Lexicon.from_json(document['lexicon'])
    if lexicon.capacity != net.output_size:
        raise DimensionMismatch(
            f"Lexicon capacity {lexicon.capacity} does not match output width {net.output_size}"
        )
    return net, lexicon
