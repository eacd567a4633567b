"""
Checkpoint files for trained models

Layout (UTF-8 text, one item per line):

    lstm-forecast-checkpoint 1
    [config]
    key=value                      training settings needed at forecast time
    [scaler]
    <feature> <min> <max>          one line per model feature
    [model <name>]                 one block per LSTM
    dims <input> <hidden> <output>
    <array> <rows> <cols>          W_i U_i b_i W_f U_f b_f W_g U_g b_g W_o U_o b_o V c
    <value>                        rows*cols values, row-major, shortest round-trip form

Vectors (biases, c) are stored with cols = 1. Values are written with repr so
load(save(m)) reproduces every array bitwise.
"""
import os
from typing import Dict, Iterator, List, Tuple

import numpy as np
from loguru import logger

from .config import atomic_write_text, format_value, read_text
from .dataset import FeatureScaler
from .errors import CheckpointError
from .neural import LstmParameters

MAGIC = 'lstm-forecast-checkpoint'
VERSION = 1


def format_checkpoint(config: Dict[str, str], feature_names: List[str], scaler: FeatureScaler,
                      models: Dict[str, LstmParameters]) -> str:
    lines = [f"{MAGIC} {VERSION}", '[config]']
    lines += [f"{key}={value}" for key, value in config.items()]
    lines.append('[scaler]')
    for name, low, high in zip(feature_names, scaler.mins, scaler.maxs):
        lines.append(f"{name} {format_value(low)} {format_value(high)}")
    for model_name, params in models.items():
        lines.append(f"[model {model_name}]")
        lines.append(f"dims {params.input_size} {params.hidden_size} {params.output_size}")
        for array_name, array in params.named_arrays():
            rows = array.shape[0]
            cols = array.shape[1] if array.ndim == 2 else 1
            lines.append(f"{array_name} {rows} {cols}")
            lines.extend(format_value(value) for value in array.ravel())
    return '\n'.join(lines) + '\n'


def save_checkpoint(path: str, config: Dict[str, str], feature_names: List[str], scaler: FeatureScaler,
                    models: Dict[str, LstmParameters]) -> None:
    atomic_write_text(path, format_checkpoint(config, feature_names, scaler, models))
    logger.info(f"Saved checkpoint with {len(models)} model(s) to {path}")


class _Lines:
    """Numbered line reader that reports positions in errors"""

    def __init__(self, text: str, label: str):
        self.lines = text.splitlines()
        self.position = 0
        self.label = label

    def error(self, message: str) -> CheckpointError:
        return CheckpointError(f"{self.label} line {self.position}: {message}")

    def peek(self) -> str:
        return self.lines[self.position] if self.position < len(self.lines) else ''

    def done(self) -> bool:
        return self.position >= len(self.lines)

    def next(self) -> str:
        if self.done():
            raise CheckpointError(f"{self.label}: unexpected end of file")
        self.position += 1
        return self.lines[self.position - 1]

    def section(self) -> Iterator[str]:
        """Lines up to the next [header]"""
        while not self.done() and not self.peek().startswith('['):
            yield self.next()


def _parse_float(lines: _Lines, text: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise lines.error(f"non-numeric value '{text}'") from None


def _parse_model(lines: _Lines) -> LstmParameters:
    parts = lines.next().split()
    if len(parts) != 4 or parts[0] != 'dims':
        raise lines.error("expected 'dims <input> <hidden> <output>'")
    try:
        inputs, hidden, outputs = (int(part) for part in parts[1:])
    except ValueError:
        raise lines.error("dims must be integers") from None
    params = LstmParameters.zeros(inputs, hidden, outputs)
    for expected_name, target in params.named_arrays():
        header = lines.next().split()
        rows = target.shape[0]
        cols = target.shape[1] if target.ndim == 2 else 1
        if header != [expected_name, str(rows), str(cols)]:
            raise lines.error(f"expected '{expected_name} {rows} {cols}', got '{' '.join(header)}'")
        values = [_parse_float(lines, lines.next()) for _ in range(target.size)]
        target[...] = np.array(values, dtype=np.float64).reshape(target.shape)
    return params


def parse_checkpoint(text: str, label: str = '<text>') -> Tuple[Dict[str, str], List[str], FeatureScaler,
                                                                 Dict[str, LstmParameters]]:
    lines = _Lines(text, label)
    header = lines.next().split()
    if len(header) != 2 or header[0] != MAGIC:
        raise lines.error("not a model checkpoint")
    if header[1] != str(VERSION):
        raise lines.error(f"unsupported checkpoint version {header[1]}")

    if lines.next() != '[config]':
        raise lines.error("expected [config]")
    config = {}
    for line in lines.section():
        if '=' not in line:
            raise lines.error(f"expected key=value, got '{line}'")
        key, value = line.split('=', 1)
        config[key] = value

    if lines.next() != '[scaler]':
        raise lines.error("expected [scaler]")
    names, mins, maxs = [], [], []
    for line in lines.section():
        parts = line.split()
        if len(parts) != 3:
            raise lines.error(f"expected '<feature> <min> <max>', got '{line}'")
        names.append(parts[0])
        mins.append(_parse_float(lines, parts[1]))
        maxs.append(_parse_float(lines, parts[2]))
    scaler = FeatureScaler(np.array(mins), np.array(maxs))

    models = {}
    while not lines.done():
        section = lines.next()
        if not (section.startswith('[model ') and section.endswith(']')):
            raise lines.error(f"expected [model <name>], got '{section}'")
        models[section[len('[model '):-1]] = _parse_model(lines)
    if not models:
        raise CheckpointError(f"{label}: checkpoint holds no model")
    return config, names, scaler, models


def load_checkpoint(path: str) -> Tuple[Dict[str, str], List[str], FeatureScaler, Dict[str, LstmParameters]]:
    if not os.path.isfile(path):
        raise CheckpointError(f"checkpoint not found: {path}")
    return parse_checkpoint(read_text(path, CheckpointError), label=path)
