"""
Classification maps: predict a label per pixel and write a binary portable
pixmap (P6) with a fixed palette. Background (label 0) is black; the
palette is also written as a JSON sidecar next to each map.
"""

import json
import logging
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from core.exceptions import ConfigError, DataFormatError
from core.training import batch_order
from evaluation.reports import EVAL_BATCH, predict_labels
from factoformer_project.tracing import trace_function
from hsi.models import LabelField
from hsi.preprocessing import PatchExtractor

logger = logging.getLogger(__name__)

# index 0 is the background
PALETTE = (
    (0, 0, 0),
    (255, 0, 0), (0, 255, 0), (0, 0, 255), (255, 255, 0),
    (0, 255, 255), (255, 0, 255), (176, 48, 96), (46, 139, 87),
    (160, 32, 240), (255, 127, 80), (127, 255, 212), (218, 112, 214),
    (160, 82, 45), (127, 255, 0), (216, 191, 216), (238, 0, 0),
    (205, 205, 0), (0, 139, 139), (255, 165, 0), (128, 128, 128),
)


def model_predictor(model, extractor: PatchExtractor, batch_size=EVAL_BATCH):
    """Wrap a classifier as ``coords (n, 2) -> 1-based labels (n,)``."""
    if hasattr(model, 'eval'):
        model.eval()

    def predictor(coords):
        coords = np.asarray(coords, dtype=np.int64).reshape(-1, 2)
        out = np.zeros(len(coords), dtype=np.int64)
        for indices in batch_order(len(coords), batch_size):
            patches = extractor.patches(coords[indices])
            out[indices] = predict_labels(model, _as_tensor(patches))
        return out

    return predictor


def _as_tensor(patches):
    return torch.from_numpy(np.ascontiguousarray(patches, dtype=np.float32))


def predict_map(predictor, labels: LabelField, all_pixels=False) -> np.ndarray:
    """
    (H, W) raster of predictions at every labeled pixel (every pixel with
    ``all_pixels``); everything not predicted stays 0.
    """
    field = labels.labels
    mask = np.ones_like(field, dtype=bool) if all_pixels else field > 0
    coords = np.argwhere(mask)
    out = np.zeros(field.shape, dtype=np.int64)
    if len(coords):
        out[coords[:, 0], coords[:, 1]] = predictor(coords)
    return out


def render_map(label_map: np.ndarray, palette=PALETTE) -> Image.Image:
    label_map = np.asarray(label_map)
    colors = np.asarray(palette, dtype=np.uint8)
    if label_map.size and label_map.max() >= len(colors):
        raise ConfigError(f"palette has {len(colors) - 1} class colors, map uses class {label_map.max()}")
    return Image.fromarray(colors[label_map])


def palette_sidecar(path):
    path = Path(path)
    return path.with_name(path.stem + '.palette.json')


@trace_function(name='export_map', attributes={'stage': 'export_map'})
def export_map(predictor, labels: LabelField, path, palette=PALETTE, all_pixels=False):
    """Write ``path`` (P6) and its palette sidecar; returns the label raster."""
    if labels.num_classes >= len(palette):
        raise ConfigError(f"palette has {len(palette) - 1} class colors, scene has {labels.num_classes} classes")
    label_map = predict_map(predictor, labels, all_pixels=all_pixels)
    image = render_map(label_map, palette)
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        image.save(path, format='PPM')
        palette_sidecar(path).write_text(json.dumps({
            'background': list(palette[0]),
            'classes': {
                str(c): {'name': labels.class_names[c - 1], 'rgb': list(palette[c])}
                for c in range(1, labels.num_classes + 1)
            },
        }, indent=2))
    except OSError as exc:
        raise DataFormatError(f"cannot write map {path}: {exc}") from exc
    logger.info("Wrote %dx%d map to %s", image.width, image.height, path)
    return label_map
