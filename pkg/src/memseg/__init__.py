"""Memory-augmented multimodal transformer for language-guided video segmentation."""

from .model import MemorySegmenter, ModelConfig

__version__ = "0.1.0"

__all__ = ["MemorySegmenter", "ModelConfig", "__version__"]
