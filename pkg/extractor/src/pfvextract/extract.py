"""Dataset extraction: images -> object proposals -> warped crops ->
conv5 feature maps -> PFV1 container."""

import warnings
from dataclasses import dataclass

import numpy as np
import PIL
import skimage
import torch
from PIL import Image

from .container import Pfv1Writer, read_manifest
from .network import INPUT_SIDE, FeatureNetwork
from .proposals import propose_boxes

DEFAULT_PROPOSAL_CAP = 1000
BATCH = 16


@dataclass
class ExtractorConfig:
    manifest: str
    output: str
    model: str = "vgg-m-random"
    input_side: int = INPUT_SIDE
    proposal_cap: int = DEFAULT_PROPOSAL_CAP
    seed: int = 0


def _version_comment(config: ExtractorConfig) -> str:
    return (
        f"pfv-extract model={config.model} torch={torch.__version__} "
        f"pillow={PIL.__version__} skimage={skimage.__version__} "
        f"numpy={np.__version__}"
    )


def _warp(image: Image.Image, box, side: int) -> np.ndarray:
    """Crop the box and anisotropically resize to side x side."""
    crop = image.crop(box).resize((side, side), Image.BILINEAR)
    return np.asarray(crop, dtype=np.uint8)


def extract_image(image: Image.Image, net: FeatureNetwork, config: ExtractorConfig):
    """(box, conv5 values) pairs for one image; the full frame is first."""
    rgb = image.convert("RGB")
    boxes = propose_boxes(np.asarray(rgb), cap=config.proposal_cap)
    results = []
    for start in range(0, len(boxes), BATCH):
        chunk = boxes[start : start + BATCH]
        crops = np.stack([_warp(rgb, box, config.input_side) for box in chunk])
        maps = net.conv5(crops).numpy()
        results.extend(zip(chunk, maps))
    return results


def extract_dataset(config: ExtractorConfig) -> str:
    """Run extraction over the manifest; returns the output path.

    Unreadable images are skipped with a warning; an image whose proposal
    generation yields nothing still gets its full-frame box.
    """
    entries = read_manifest(config.manifest)
    net = FeatureNetwork(config.model, seed=config.seed)
    written = 0
    with Pfv1Writer(config.output, comment=_version_comment(config)) as writer:
        for path, label, split in entries:
            try:
                image = Image.open(path)
                image.load()
            except (OSError, ValueError) as exc:
                warnings.warn(f"skipping unreadable image {path}: {exc}")
                continue
            proposals = extract_image(image, net, config)
            image_id = _image_id(path)
            writer.write_image(image_id, label, split, proposals)
            written += 1
    if written == 0:
        warnings.warn("no images extracted")
    return config.output


def _image_id(path: str) -> str:
    name = path.replace("\\", "/").rsplit("/", 1)[-1]
    return name.rsplit(".", 1)[0] if "." in name else name
