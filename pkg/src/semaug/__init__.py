"""Semantic-guided generative image augmentation.

Each original image gets a prompt built from its label and a selected
caption; the caption-image similarity sets the guidance scale, and an
image-to-image diffusion backend produces the augmented image. Filters,
perturbation baselines, a similarity report and a linear-probe harness
round out the toolkit.
"""

__version__ = "0.1.0"

from .captioning import SamplingConfig, ScoredCaptionSet, caption_record, select_caption
from .config import PipelineConfig, load_config
from .dataset import DatasetManifest, ImageRecord, read_manifest, scan_dataset, write_manifest
from .generation import AugmentationManifest, AugRecord, GenerationRequest, run_pipeline
from .prompting import GuidanceConfig, WeightedPrompt, build_prompt, guidance_scale, weight_embeddings

__all__ = [
    "AugRecord",
    "AugmentationManifest",
    "DatasetManifest",
    "GenerationRequest",
    "GuidanceConfig",
    "ImageRecord",
    "PipelineConfig",
    "SamplingConfig",
    "ScoredCaptionSet",
    "WeightedPrompt",
    "build_prompt",
    "caption_record",
    "guidance_scale",
    "load_config",
    "read_manifest",
    "run_pipeline",
    "scan_dataset",
    "select_caption",
    "weight_embeddings",
    "write_manifest",
]
