"""Feature-extraction sidecar: raw images to PFV1 feature containers."""

from .extract import ExtractorConfig, extract_dataset, extract_image
from .network import FeatureNetwork

__all__ = ["ExtractorConfig", "extract_dataset", "extract_image", "FeatureNetwork"]

__version__ = "0.1.0"
