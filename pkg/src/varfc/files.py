"""VFCB files on disk: encode an image to a stream, decode a stream to a prediction."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .bench import time_edge
from .edge_cloud import Response, cloud_infer
from .model import VariableRateModel


def encode_file(model: VariableRateModel, image: np.ndarray, lam: float, path) -> int:
    """Write the edge bitstream for one (C, H, W) image; returns the file size."""
    if not model.compression:
        raise ValueError("model was trained without the compression path")
    model.autoencoder.embedding.normalize(lam)  # range check before any work
    stream = time_edge(model, np.asarray(image, np.float32), lam)[0]
    Path(path).write_bytes(stream)
    return len(stream)


def decode_file(model: VariableRateModel, path) -> Response:
    """Cloud-side prediction from a VFCB file."""
    return cloud_infer(model, Path(path).read_bytes())
