"""
Model file format, little-endian throughout:

    magic       6 bytes  "MDCNN1"
    version     u16      1
    count       u16      number of tensors
    per tensor:
        name length u16, UTF-8 name
        rank u8, then each extent as u32
        payload: float32 values in row-major order
"""

import os
import struct
from pathlib import Path
from typing import BinaryIO, Dict, Union

import numpy as np

from src.config import MODEL_FORMAT_VERSION, MODEL_MAGIC
from src.modules.model import ModelParams
from src.modules.tensor import MAX_RANK
from src.utils.errors import ModelFileError, NonFiniteError

PathLike = Union[str, Path]
PAYLOAD_DTYPE = np.dtype("<f4")


def model_file_bytes(params: ModelParams) -> bytes:
    """Serialize params to the model file format."""
    named = params.named_tensors()
    chunks = [MODEL_MAGIC, struct.pack("<HH", MODEL_FORMAT_VERSION, len(named))]
    for name, tensor in named.items():
        if not np.all(np.isfinite(tensor)):
            raise NonFiniteError(f"tensor '{name}' is not finite")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", tensor.ndim))
        chunks.append(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
        chunks.append(np.ascontiguousarray(tensor, dtype=PAYLOAD_DTYPE).tobytes())
    return b"".join(chunks)


def save_model(params: ModelParams, path: PathLike) -> None:
    """Write the model through a temporary file renamed on success."""
    path = Path(path)
    data = model_file_bytes(params)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    try:
        with open(tmp, "wb") as handle:
            handle.write(data)
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


def _read_exact(handle: BinaryIO, size: int, what: str) -> bytes:
    data = handle.read(size)
    if len(data) != size:
        raise ModelFileError(f"truncated model file while reading {what}")
    return data


def load_model(path: PathLike) -> ModelParams:
    """
    Read a model file.

    Raises:
        ModelFileError: Wrong magic or version, truncated data or trailing bytes
        ArchitectureMismatchError: Tensor names do not match the model
    """
    path = Path(path)
    try:
        handle = open(path, "rb")
    except OSError as e:
        raise ModelFileError(f"cannot open model file {path}: {e}")

    with handle:
        magic = handle.read(len(MODEL_MAGIC))
        if magic != MODEL_MAGIC:
            raise ModelFileError(f"{path} is not a model file (bad magic)")
        version, count = struct.unpack("<HH", _read_exact(handle, 4, "header"))
        if version != MODEL_FORMAT_VERSION:
            raise ModelFileError(f"unsupported model format version {version}")

        named: Dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_length,) = struct.unpack("<H", _read_exact(handle, 2, "name length"))
            try:
                name = _read_exact(handle, name_length, "name").decode("utf-8")
            except UnicodeDecodeError:
                raise ModelFileError("tensor name is not valid UTF-8")
            (rank,) = struct.unpack("<B", _read_exact(handle, 1, f"rank of '{name}'"))
            if not 1 <= rank <= MAX_RANK:
                raise ModelFileError(f"tensor '{name}' has invalid rank {rank}")
            shape = struct.unpack(f"<{rank}I", _read_exact(handle, 4 * rank, f"shape of '{name}'"))
            if any(extent == 0 for extent in shape):
                raise ModelFileError(f"tensor '{name}' has a zero extent")
            size = int(np.prod(shape))
            payload = _read_exact(handle, size * PAYLOAD_DTYPE.itemsize, f"payload of '{name}'")
            tensor = np.frombuffer(payload, dtype=PAYLOAD_DTYPE).astype(np.float32).reshape(shape)
            if not np.all(np.isfinite(tensor)):
                raise ModelFileError(f"tensor '{name}' holds non-finite values")
            named[name] = tensor

        if handle.read(1):
            raise ModelFileError("payload is longer than the shape table describes")

    return ModelParams.from_named(named)
