"""
Single-layer LSTM with an affine head, backpropagation through time and SGD
"""
import math
from dataclasses import dataclass
from typing import List, NamedTuple, Sequence, Tuple

import numpy as np

from .errors import ConfigError, ShapeError, TrainingError

# Gate order inside the stacked W, U and b arrays
GATE_KEYS = ('i', 'f', 'g', 'o')
INPUT_GATE, FORGET_GATE, CANDIDATE_GATE, OUTPUT_GATE = range(4)

MASK64 = (1 << 64) - 1
_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX_A = np.uint64(0xBF58476D1CE4E5B9)
_MIX_B = np.uint64(0x94D049BB133111EB)


class RngState:
    """Split-mix 64-bit generator; the n-th output is mix(seed + n * gamma)"""

    def __init__(self, seed: int):
        self.seed = int(seed) & MASK64
        self.counter = 0

    def next_u64(self, count: int) -> np.ndarray:
        steps = np.arange(self.counter + 1, self.counter + count + 1, dtype=np.uint64)
        self.counter += count
        z = np.uint64(self.seed) + steps * _GAMMA
        z = (z ^ (z >> np.uint64(30))) * _MIX_A
        z = (z ^ (z >> np.uint64(27))) * _MIX_B
        return z ^ (z >> np.uint64(31))

    def uniform(self, low: float, high: float, shape: Tuple[int, ...]) -> np.ndarray:
        """Uniform draws in [low, high) from the top 53 bits of each output"""
        count = int(np.prod(shape))
        unit = (self.next_u64(count) >> np.uint64(11)).astype(np.float64) * 2.0 ** -53
        return (low + (high - low) * unit).reshape(shape)

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.next_u64(n), kind='stable')


@dataclass(eq=False)
class LstmParameters:
    """Stacked gate weights (gate order i, f, g, o) plus the output projection"""
    W: np.ndarray  # (4, hidden, input)
    U: np.ndarray  # (4, hidden, hidden)
    b: np.ndarray  # (4, hidden)
    V: np.ndarray  # (output, hidden)
    c: np.ndarray  # (output,)

    def __post_init__(self):
        if self.W.ndim != 3 or self.W.shape[0] != 4:
            raise ShapeError(f"W must be (4, hidden, input), got {self.W.shape}")
        hidden, inputs = self.W.shape[1:]
        if self.U.shape != (4, hidden, hidden):
            raise ShapeError(f"U must be {(4, hidden, hidden)}, got {self.U.shape}")
        if self.b.shape != (4, hidden):
            raise ShapeError(f"b must be {(4, hidden)}, got {self.b.shape}")
        if self.V.ndim != 2 or self.V.shape[1] != hidden:
            raise ShapeError(f"V must be (output, {hidden}), got {self.V.shape}")
        if self.c.shape != (self.V.shape[0],):
            raise ShapeError(f"c must be ({self.V.shape[0]},), got {self.c.shape}")
        if min(hidden, inputs, self.V.shape[0]) < 1:
            raise ShapeError("dimensions must be positive")

    @property
    def input_size(self) -> int:
        return self.W.shape[2]

    @property
    def hidden_size(self) -> int:
        return self.W.shape[1]

    @property
    def output_size(self) -> int:
        return self.V.shape[0]

    @property
    def parameter_count(self) -> int:
        return sum(array.size for array in self.arrays())

    def arrays(self) -> Tuple[np.ndarray, ...]:
        return self.W, self.U, self.b, self.V, self.c

    def named_arrays(self) -> List[Tuple[str, np.ndarray]]:
        """Per-gate views in checkpoint order: W_i, U_i, b_i, ..., W_o, U_o, b_o, V, c"""
        named = []
        for k, gate in enumerate(GATE_KEYS):
            named += [(f"W_{gate}", self.W[k]), (f"U_{gate}", self.U[k]), (f"b_{gate}", self.b[k])]
        return named + [('V', self.V), ('c', self.c)]

    def copy(self) -> 'LstmParameters':
        return LstmParameters(*(array.copy() for array in self.arrays()))

    def zeros_like(self) -> 'LstmParameters':
        return LstmParameters(*(np.zeros_like(array) for array in self.arrays()))

    @classmethod
    def zeros(cls, input_size: int, hidden_size: int, output_size: int) -> 'LstmParameters':
        return cls(np.zeros((4, hidden_size, input_size)), np.zeros((4, hidden_size, hidden_size)),
                   np.zeros((4, hidden_size)), np.zeros((output_size, hidden_size)), np.zeros(output_size))

    def is_finite(self) -> bool:
        return all(np.isfinite(array).all() for array in self.arrays())


class StepCache(NamedTuple):
    """Intermediates of one lstm_step kept for backpropagation"""
    x: np.ndarray
    h_prev: np.ndarray
    c_prev: np.ndarray
    i: np.ndarray
    f: np.ndarray
    g: np.ndarray
    o: np.ndarray
    c: np.ndarray
    tanh_c: np.ndarray
    h: np.ndarray


def sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def init_parameters(input_size: int, hidden_size: int, output_size: int, rng: RngState) -> LstmParameters:
    """Uniform weights in +-1/sqrt(hidden); forget bias 1.0, other biases 0"""
    for name, value in (('input', input_size), ('hidden', hidden_size), ('output', output_size)):
        if int(value) != value or value < 1:
            raise ConfigError(f"{name} size must be a positive integer, got {value}")
    scale = 1.0 / math.sqrt(hidden_size)
    W = rng.uniform(-scale, scale, (4, hidden_size, input_size))
    U = rng.uniform(-scale, scale, (4, hidden_size, hidden_size))
    V = rng.uniform(-scale, scale, (output_size, hidden_size))
    b = np.zeros((4, hidden_size))
    b[FORGET_GATE] = 1.0
    return LstmParameters(W, U, b, V, np.zeros(output_size))


def lstm_step(params: LstmParameters, x: np.ndarray, h_prev: np.ndarray,
              c_prev: np.ndarray) -> Tuple[np.ndarray, np.ndarray, StepCache]:
    """One LSTM step; x, h_prev and c_prev may carry a leading batch axis"""
    x = np.asarray(x, dtype=np.float64)
    hidden = params.hidden_size
    if x.shape[-1] != params.input_size:
        raise ShapeError(f"input has {x.shape[-1]} features, model expects {params.input_size}")
    if h_prev.shape[-1] != hidden or c_prev.shape != h_prev.shape:
        raise ShapeError(f"state shapes {h_prev.shape}, {c_prev.shape} do not match hidden size {hidden}")

    z = (x @ params.W.reshape(4 * hidden, -1).T
         + h_prev @ params.U.reshape(4 * hidden, hidden).T
         + params.b.reshape(4 * hidden))
    z = z.reshape(z.shape[:-1] + (4, hidden))
    i = sigmoid(z[..., INPUT_GATE, :])
    f = sigmoid(z[..., FORGET_GATE, :])
    g = np.tanh(z[..., CANDIDATE_GATE, :])
    o = sigmoid(z[..., OUTPUT_GATE, :])
    c = f * c_prev + i * g
    tanh_c = np.tanh(c)
    h = o * tanh_c
    return h, c, StepCache(x, h_prev, c_prev, i, f, g, o, c, tanh_c, h)


def forward(params: LstmParameters, sequence: np.ndarray) -> Tuple[np.ndarray, List[StepCache]]:
    """Run a (L, input) sequence, or a (batch, L, input) stack, from zero state

    Returns the projection of the final hidden state and the per-step caches.
    """
    sequence = np.asarray(sequence, dtype=np.float64)
    batched = sequence.ndim == 3
    if sequence.ndim == 2:
        sequence = sequence[np.newaxis]
    elif not batched:
        raise ShapeError(f"sequence must be 2-D or 3-D, got shape {sequence.shape}")
    if sequence.shape[1] == 0:
        raise ShapeError("sequence is empty")

    h = np.zeros((sequence.shape[0], params.hidden_size))
    c = np.zeros_like(h)
    caches = []
    for t in range(sequence.shape[1]):
        h, c, cache = lstm_step(params, sequence[:, t, :], h, c)
        caches.append(cache)
    prediction = h @ params.V.T + params.c
    return (prediction if batched else prediction[0]), caches


def loss(prediction: np.ndarray, target: np.ndarray) -> float:
    """Mean squared error over all elements"""
    prediction = np.asarray(prediction, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if prediction.shape != target.shape:
        raise ShapeError(f"prediction {prediction.shape} and target {target.shape} differ")
    return float(np.mean((prediction - target) ** 2))


def backward(params: LstmParameters, caches: Sequence[StepCache], prediction: np.ndarray,
             target: np.ndarray) -> LstmParameters:
    """Exact gradient of loss(prediction, target) through every step"""
    if not caches:
        raise ShapeError("no caches to backpropagate through")
    prediction = np.atleast_2d(np.asarray(prediction, dtype=np.float64))
    target = np.atleast_2d(np.asarray(target, dtype=np.float64))
    if prediction.shape != target.shape:
        raise ShapeError(f"prediction {prediction.shape} and target {target.shape} differ")
    hidden = params.hidden_size
    if prediction.shape[1] != params.output_size or caches[-1].h.shape != (prediction.shape[0], hidden):
        raise ShapeError("caches do not come from a forward pass of these parameters")

    d_prediction = 2.0 * (prediction - target) / prediction.size
    d_V = d_prediction.T @ caches[-1].h
    d_c = d_prediction.sum(axis=0)

    U_flat = params.U.reshape(4 * hidden, hidden)
    d_W = np.zeros((4 * hidden, params.input_size))
    d_U = np.zeros((4 * hidden, hidden))
    d_b = np.zeros(4 * hidden)

    d_h = d_prediction @ params.V
    d_cell = np.zeros_like(d_h)
    for cache in reversed(caches):
        d_o = d_h * cache.tanh_c
        d_cell = d_cell + d_h * cache.o * (1.0 - cache.tanh_c ** 2)
        d_i = d_cell * cache.g
        d_f = d_cell * cache.c_prev
        d_g = d_cell * cache.i
        d_z = np.concatenate([
            d_i * cache.i * (1.0 - cache.i),
            d_f * cache.f * (1.0 - cache.f),
            d_g * (1.0 - cache.g ** 2),
            d_o * cache.o * (1.0 - cache.o),
        ], axis=1)
        d_W += d_z.T @ cache.x
        d_U += d_z.T @ cache.h_prev
        d_b += d_z.sum(axis=0)
        d_h = d_z @ U_flat
        d_cell = d_cell * cache.f

    return LstmParameters(d_W.reshape(4, hidden, -1), d_U.reshape(4, hidden, hidden),
                          d_b.reshape(4, hidden), d_V, d_c)


def global_norm(gradients: LstmParameters) -> float:
    return math.sqrt(sum(float(np.sum(array * array)) for array in gradients.arrays()))


def sgd_step(params: LstmParameters, gradients: LstmParameters, learning_rate: float,
             clip: float) -> LstmParameters:
    """Clip gradients to a global norm, then take one descent step"""
    if not learning_rate > 0 or not math.isfinite(learning_rate):
        raise ConfigError(f"learning rate must be positive, got {learning_rate}")
    if not clip > 0:
        raise ConfigError(f"clip must be positive, got {clip}")
    if not gradients.is_finite():
        raise TrainingError("non-finite gradient; training aborted")

    norm = global_norm(gradients)
    scale = clip / norm if norm > clip else 1.0
    updated = LstmParameters(*(p - learning_rate * scale * g
                               for p, g in zip(params.arrays(), gradients.arrays())))
    if not updated.is_finite():
        raise TrainingError("parameters became non-finite; training aborted")
    return updated


def finite_difference_gradients(params: LstmParameters, sequence: np.ndarray, target: np.ndarray,
                                epsilon: float = 1e-5) -> LstmParameters:
    """Central-difference estimate of every gradient component"""
    perturbed = params.copy()
    estimate = params.zeros_like()
    for array, grad in zip(perturbed.arrays(), estimate.arrays()):
        for index in np.ndindex(array.shape):
            original = array[index]
            array[index] = original + epsilon
            loss_plus = loss(forward(perturbed, sequence)[0], target)
            array[index] = original - epsilon
            loss_minus = loss(forward(perturbed, sequence)[0], target)
            array[index] = original
            grad[index] = (loss_plus - loss_minus) / (2.0 * epsilon)
    return estimate
