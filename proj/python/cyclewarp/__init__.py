"""Python access to the cyclewarp core: warping, cycle warping, structure
transplant, losses, metrics, synthetic scenes and the depth/pose optimizer.

Images are float64 arrays shaped (H, W) or (H, W, 3) with values in [0, 1];
depth maps are (H, W) arrays where non-positive entries mark invalid pixels;
poses are 4x4 homogeneous matrices; twists are 6-vectors (rotation, then
translation).
"""

from ._core import (
    ConfigError,
    IoError,
    MisuseError,
    NumericalError,
    Intrinsics,
    apply_perturbation,
    compute_correspondence,
    cycle_warp,
    depth_metrics,
    ema_update,
    fft2,
    generate_scene,
    median_scale,
    photometric_loss,
    read_pfm,
    read_png16,
    se3_exp,
    ssim,
    structure_transplant,
    train,
    warp_image,
    write_pfm,
    write_png16,
)

__all__ = [name for name in dir() if not name.startswith("_")]
