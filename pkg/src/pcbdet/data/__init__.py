"""Board ingestion, patch extraction, splitting, augmentation and synthetic boards."""

from pcbdet.data.augment import AugmentationPolicy, augment, sample_rng
from pcbdet.data.patchify import SplitManifest, clip_annotations, crop_patch, patch_origins, patchify_board, split_dataset
from pcbdet.data.records import BoardRecord, PatchRecord
from pcbdet.data.synthetic import SceneSpec, generate_synthetic_scene, synthetic_boards
