"""
Checkpoint container.

    magic      4 bytes  b"CVLA"
    version    u32 LE
    metadata   u32 LE byte length + canonical JSON (sorted keys, UTF-8)
    count      u32 LE number of tensor records
    records    u32 name length, name (UTF-8), u8 dtype tag (1 = float64),
               u32 rank, rank x u32 dims, little-endian float64 payload

Optimizer moments ride along as tensors named optim.m.<param> and
optim.v.<param>.
"""

import hashlib
import json
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, BinaryIO, Dict, Optional

import numpy as np

from src.model.chatvla import ChatVLA
from src.model.config import ModelConfig
from src.model.params import param_shapes
from src.tensor_core import Tensor
from src.utils.logger import setup_logger
from src.worldsim.vocab import vocab_hash

logger = setup_logger()

MAGIC = b"CVLA"
FORMAT_VERSION = 1
DTYPE_FLOAT64 = 1
OPTIM_PREFIX = "optim."


class CheckpointError(ValueError):
    """Raised when a checkpoint cannot be read or does not fit the model"""

    def __init__(self, field_name: str, message: str):
        self.field = field_name
        super().__init__(f"{field_name}: {message}")


@dataclass
class Checkpoint:
    tensors: "OrderedDict[str, np.ndarray]"
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def model_config(self) -> ModelConfig:
        return ModelConfig.from_dict(self.metadata["model_config"])

    @property
    def stage(self) -> int:
        return int(self.metadata.get("stage", 0))

    @property
    def step(self) -> int:
        return int(self.metadata.get("step", 0))

    @property
    def model_tensors(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, v) for k, v in self.tensors.items() if not k.startswith(OPTIM_PREFIX))

    @property
    def optimizer_tensors(self) -> Dict[str, np.ndarray]:
        return {k: v for k, v in self.tensors.items() if k.startswith(OPTIM_PREFIX)}

    def to_model(self) -> ChatVLA:
        params = OrderedDict(
            (name, Tensor(value.copy(), requires_grad=True, name=name))
            for name, value in self.model_tensors.items()
        )
        return ChatVLA(self.model_config, params)

    @classmethod
    def from_model(cls, model: ChatVLA, metadata: Dict[str, Any], optimizer=None) -> "Checkpoint":
        tensors = model.state_dict()
        meta = {"model_config": model.config.to_dict(), "vocab_hash": vocab_hash(), **metadata}
        if optimizer is not None:
            tensors.update((k, v.copy()) for k, v in optimizer.state_tensors().items())
            meta["optimizer_steps"] = optimizer.state_steps()
        return cls(tensors, meta)

    def checksum(self, prefix: str = "") -> str:
        digest = hashlib.sha256()
        for name, value in self.tensors.items():
            if name.startswith(prefix):
                digest.update(name.encode("utf-8"))
                digest.update(np.ascontiguousarray(value, dtype="<f8").tobytes())
        return digest.hexdigest()


def canonical_metadata(metadata: Dict[str, Any]) -> bytes:
    return json.dumps(metadata, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = canonical_metadata(ckpt.metadata)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", FORMAT_VERSION))
        f.write(struct.pack("<I", len(meta)))
        f.write(meta)
        f.write(struct.pack("<I", len(ckpt.tensors)))
        for name, value in ckpt.tensors.items():
            encoded = name.encode("utf-8")
            array = np.ascontiguousarray(value, dtype="<f8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<B", DTYPE_FLOAT64))
            f.write(struct.pack("<I", array.ndim))
            f.write(struct.pack(f"<{array.ndim}I", *array.shape))
            f.write(array.tobytes())
    logger.info(f"Saved checkpoint ({len(ckpt.tensors)} tensors, stage {ckpt.stage}) to {path}")
    return path


def _read_exact(f: BinaryIO, n: int, field_name: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise CheckpointError(field_name, f"truncated: expected {n} bytes, got {len(data)}")
    return data


def _u32(f: BinaryIO, field_name: str) -> int:
    return struct.unpack("<I", _read_exact(f, 4, field_name))[0]


def load_checkpoint(path, expected: Optional[ModelConfig] = None) -> Checkpoint:
    """
    Read a container; validates magic, version and every model tensor's
    shape against the stored (or the expected) ModelConfig.
    """
    path = Path(path)
    try:
        with open(path, "rb") as f:
            if _read_exact(f, 4, "magic") != MAGIC:
                raise CheckpointError("magic", f"not a checkpoint file: {path}")
            version = _u32(f, "version")
            if version != FORMAT_VERSION:
                raise CheckpointError("version", f"unsupported format version {version}")
            meta_len = _u32(f, "metadata")
            try:
                metadata = json.loads(_read_exact(f, meta_len, "metadata").decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as e:
                raise CheckpointError("metadata", f"not canonical JSON: {e}") from e

            count = _u32(f, "tensor_count")
            tensors: "OrderedDict[str, np.ndarray]" = OrderedDict()
            for i in range(count):
                label = f"tensor[{i}]"
                name_len = _u32(f, f"{label}.name_length")
                name = _read_exact(f, name_len, f"{label}.name").decode("utf-8")
                dtype = struct.unpack("<B", _read_exact(f, 1, f"{name}.dtype"))[0]
                if dtype != DTYPE_FLOAT64:
                    raise CheckpointError(f"{name}.dtype", f"unknown dtype tag {dtype}")
                rank = _u32(f, f"{name}.rank")
                dims = struct.unpack(f"<{rank}I", _read_exact(f, 4 * rank, f"{name}.dims"))
                n_bytes = 8 * int(np.prod(dims, dtype=np.int64))
                payload = _read_exact(f, n_bytes, name)
                tensors[name] = np.frombuffer(payload, dtype="<f8").reshape(dims).astype(np.float64)
    except CheckpointError as e:
        logger.error(f"Failed to load checkpoint {path}: {str(e)}")
        raise
    except OSError as e:
        logger.error(f"Failed to open checkpoint {path}: {str(e)}")
        raise CheckpointError("path", f"cannot read {path}: {e}") from e

    ckpt = Checkpoint(tensors, metadata)
    _validate_shapes(ckpt, expected)
    return ckpt


def _validate_shapes(ckpt: Checkpoint, expected: Optional[ModelConfig]):
    if "model_config" not in ckpt.metadata:
        raise CheckpointError("metadata.model_config", "missing")
    try:
        config = expected or ckpt.model_config
    except (TypeError, ValueError) as e:
        raise CheckpointError("metadata.model_config", str(e)) from e
    shapes = param_shapes(config)
    for name, shape in shapes.items():
        if name not in ckpt.tensors:
            raise CheckpointError(name, "missing from checkpoint")
        if ckpt.tensors[name].shape != shape:
            raise CheckpointError(
                name, f"shape {ckpt.tensors[name].shape} does not match model {shape}"
            )
    extra = [n for n in ckpt.model_tensors if n not in shapes]
    if extra:
        raise CheckpointError(extra[0], "not a parameter of this model")
