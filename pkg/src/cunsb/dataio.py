"""Image file I/O and domain conversions.

On disk images are 8-bit RGB; in memory they are float64 (H, W, 3) arrays,
either in [0, 1] (metric domain, straight /255 dequantization) or in [-1, 1]
(model domain). Readers are strict about channel count: anything that is not
3-channel RGB raises DataError rather than being silently converted.
"""

from __future__ import annotations

from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError

from .errors import DataError

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


def unit_to_signed(x: np.ndarray) -> np.ndarray:
    """[0, 1] -> [-1, 1]."""
    return np.asarray(x, dtype=np.float64) * 2.0 - 1.0


def signed_to_unit(x: np.ndarray) -> np.ndarray:
    """[-1, 1] -> [0, 1], clipping stray values."""
    return np.clip((np.asarray(x, dtype=np.float64) + 1.0) * 0.5, 0.0, 1.0)


def read_image(path, image_size: Optional[int] = None) -> np.ndarray:
    """Read an RGB image to float64 (H, W, 3) in [0, 1].

    image_size > 0 center-crops to a square and resizes to that side length;
    None or <= 0 keeps the native geometry. Non-RGB files (grayscale, alpha)
    raise DataError naming the offending mode.
    """
    path = Path(path)
    try:
        img = Image.open(path)
        img.load()
    except FileNotFoundError:
        raise DataError(f"image not found: {path}")
    except (UnidentifiedImageError, OSError) as exc:
        raise DataError(f"cannot read image {path}: {exc}")
    if img.mode != "RGB":
        raise DataError(
            f"expected a 3-channel RGB image, got mode {img.mode!r}: {path}")
    if image_size is not None and image_size > 0:
        img = center_crop_square(img)
        img = img.resize((image_size, image_size),
                         getattr(Image, "Resampling", Image).BICUBIC)
    return np.asarray(img, dtype=np.float64) / 255.0


def center_crop_square(img: Image.Image) -> Image.Image:
    """Crop the largest centered square."""
    w, h = img.size
    side = min(w, h)
    left = (w - side) // 2
    top = (h - side) // 2
    return img.crop((left, top, left + side, top + side))


def load_image(path, image_size: Optional[int] = None) -> np.ndarray:
    """Read an RGB image to the model domain: float64 (H, W, 3) in [-1, 1]."""
    return unit_to_signed(read_image(path, image_size))


def save_image(path, x: np.ndarray) -> None:
    """Write a [-1, 1] (H, W, 3) array as an 8-bit RGB PNG."""
    arr = np.asarray(x)
    if arr.ndim != 3 or arr.shape[-1] != 3:
        raise ValueError(f"expected an (H, W, 3) array, got shape {arr.shape}")
    quantized = np.rint(signed_to_unit(arr) * 255.0).astype(np.uint8)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(quantized, mode="RGB").save(path)


def list_images(directory) -> List[Path]:
    """Sorted image paths directly under directory."""
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"not a directory: {directory}")
    return sorted(p for p in directory.iterdir()
                  if p.suffix.lower() in IMAGE_SUFFIXES and p.is_file())


def load_folder(directory, image_size: Optional[int] = None) -> List[Tuple[str, np.ndarray]]:
    """Load every image in a directory as (stem, [-1, 1] array), sorted by stem."""
    items = [(p.stem, load_image(p, image_size)) for p in list_images(directory)]
    if not items:
        raise DataError(f"no images found in {directory}")
    return items


def to_tensor(x: np.ndarray) -> torch.Tensor:
    """(H, W, 3) [-1, 1] array -> float32 (3, H, W) tensor."""
    return torch.from_numpy(np.ascontiguousarray(np.moveaxis(x, -1, 0))).float()


def from_tensor(t: torch.Tensor) -> np.ndarray:
    """(3, H, W) tensor -> float64 (H, W, 3) array clipped to [-1, 1]."""
    arr = t.detach().cpu().double().numpy()
    if arr.ndim != 3:
        raise ValueError(f"expected a (C, H, W) tensor, got shape {tuple(t.shape)}")
    return np.clip(np.moveaxis(arr, 0, -1), -1.0, 1.0)


def stack_images(images: Sequence[np.ndarray]) -> torch.Tensor:
    """List of (H, W, 3) arrays -> (B, 3, H, W) float32 batch."""
    if not images:
        raise ValueError("cannot stack an empty image list")
    return torch.stack([to_tensor(im) for im in images], dim=0)
