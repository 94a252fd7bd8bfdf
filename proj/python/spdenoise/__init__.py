"""Two-stage denoising of non-extreme salt-and-pepper noise.

Images are 2-D ``numpy.uint8`` arrays; noise maps hold 0 (clean) or 1 (noise).
"""

from ._core import (
    CheckpointError,
    ConfigError,
    ImageIoError,
    Network,
    ShapeError,
    denoise_two_stage,
    detect,
    gradcheck,
    init_network,
    load_network,
    median_filter,
    psnr,
    read_image,
    restore,
    set_num_threads,
    synthesize,
    write_image,
    zero_noise,
)

__all__ = [
    "CheckpointError",
    "ConfigError",
    "ImageIoError",
    "Network",
    "ShapeError",
    "denoise_two_stage",
    "detect",
    "gradcheck",
    "init_network",
    "load_network",
    "median_filter",
    "psnr",
    "read_image",
    "restore",
    "set_num_threads",
    "synthesize",
    "write_image",
    "zero_noise",
]
