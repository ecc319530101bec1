"""Dataset ingestion, synthetic data, augmentation and identity sampling."""

from .dataset import (
    DISTRACTOR,
    FLAG_CODES,
    FLAG_NAMES,
    IMAGENET_MEAN,
    IMAGENET_STD,
    JUNK,
    MARKET_DIRS,
    NORMAL,
    DatasetIndex,
    Sample,
    flag_for_pid,
    format_reid_filename,
    load_dataset,
    load_split,
    parse_reid_filename,
    read_image,
    write_image,
    write_market_layout,
)
from .sampler import Batch, PKSampler, pk_sampler
from .synth import render_person, structural_similarity, synth_dataset, write_synth_manifest
from .transforms import (
    AugmentConfig,
    REAConfig,
    augment,
    crop,
    erase,
    hflip,
    normalize,
    random_erasing,
    resize,
    sample_erase_rect,
)
