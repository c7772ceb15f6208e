# This file is part of qslr
#
# qslr is free software: you can redistribute it and/or modify
# it under the terms of the GNU Lesser General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.
#
# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU Lesser General Public License for more details.
#
# You should have received a copy of the GNU Lesser General Public License
# along with this program.  If not, see <https://www.gnu.org/licenses/>.
#
#
# Copyright 2024 The qslr authors

"""
Color images as pure quaternion matrices, degradations and quality metrics.

Pixel values live in [0, 1]. Noise levels are given on the 0-255 scale.
"""

import math
import os
import tempfile
import unittest
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np
from PIL import Image
from skimage.metrics import mean_squared_error, structural_similarity

from .exceptions import DomainError, FileFormatError, ShapeError
from .quaternion import QMatrix, inner

PathLike = Union[str, Path]

# Offset of the bit depth byte in a PNG file (signature, IHDR length and tag,
# width, height).
_PNG_DEPTH_OFFSET = 24
_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
_IMAGE_SUFFIXES = {".png": "PNG", ".ppm": "PPM"}
_ACCEPTED_MODES = ("RGB", "RGBA", "L", "P")


@dataclass(eq=False)
class ColorImage:
    """
    RGB image with float pixels of shape (rows, cols, 3).
    """

    pixels: np.ndarray

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ShapeError(f"Color image must be rows x cols x 3, got {self.pixels.shape}")

    @property
    def rows(self) -> int:
        return self.pixels.shape[0]

    @property
    def cols(self) -> int:
        return self.pixels.shape[1]

    @property
    def dims(self) -> Tuple[int, int]:
        return self.pixels.shape[:2]

    @property
    def channels(self) -> List[np.ndarray]:
        return [self.pixels[:, :, c] for c in range(3)]

    def clamped(self) -> "ColorImage":
        return ColorImage(np.clip(self.pixels, 0.0, 1.0))

    def crop(self, top: int, left: int, rows: int, cols: int) -> "ColorImage":
        if top < 0 or left < 0 or top + rows > self.rows or left + cols > self.cols:
            raise ShapeError(f"Crop {rows}x{cols} at ({top}, {left}) exceeds image {self.dims}")
        return ColorImage(self.pixels[top : top + rows, left : left + cols].copy())

    def __eq__(self, other):
        return isinstance(other, ColorImage) and np.array_equal(self.pixels, other.pixels)

    __hash__ = None


@dataclass(eq=False)
class ObservationMask:
    """
    Set Ω of observed pixels, True where observed. Applying the mask is the
    projection 𝒫_Ω.
    """

    observed: np.ndarray

    def __post_init__(self):
        self.observed = np.asarray(self.observed, dtype=bool)
        if self.observed.ndim != 2:
            raise ShapeError(f"Mask must be 2-D, got {self.observed.ndim}-D")

    @property
    def dims(self) -> Tuple[int, int]:
        return self.observed.shape

    @property
    def fraction(self) -> float:
        return float(self.observed.mean()) if self.observed.size else 0.0

    @property
    def missing(self) -> np.ndarray:
        return ~self.observed

    def apply(self, q: QMatrix) -> QMatrix:
        """
        :return: 𝒫_Ω(q), entries outside Ω set to 0.
        :raises ShapeError: If q does not match the mask.
        """
        if q.shape != self.dims:
            raise ShapeError(f"Mask shape {self.dims} does not match matrix shape {q.shape}")
        return q * self.observed.astype(np.float64)

    def to_rle(self) -> str:
        """
        Run-length text: "rows cols" then the alternating run lengths in raster
        order, starting with a (possibly empty) run of missing pixels.
        """
        flat = self.observed.ravel()
        runs = []
        current, count = False, 0
        for v in flat:
            if v == current:
                count += 1
            else:
                runs.append(count)
                current, count = v, 1
        runs.append(count)
        rows, cols = self.dims
        return f"{rows} {cols}\n" + " ".join(str(r) for r in runs) + "\n"

    @classmethod
    def from_rle(cls, text: str, path: PathLike = "<string>") -> "ObservationMask":
        """
        :raises FileFormatError: If the text is malformed or the runs do not
            cover the image exactly.
        """
        lines = text.split("\n", 1)
        try:
            rows, cols = (int(v) for v in lines[0].split())
            runs = [int(v) for v in (lines[1].split() if len(lines) > 1 else [])]
        except ValueError as e:
            raise FileFormatError(path, f"malformed run-length mask: {e}") from e
        if rows < 0 or cols < 0 or any(r < 0 for r in runs) or sum(runs) != rows * cols:
            raise FileFormatError(path, f"run lengths do not cover a {rows}x{cols} mask")
        values = np.repeat(np.arange(len(runs)) % 2 == 1, runs)
        return cls(values.reshape(rows, cols))


def encode(img: ColorImage) -> QMatrix:
    """
    :return: Pure quaternion matrix with (R, G, B) in the (i, j, k) planes.
    """
    r, g, b = img.channels
    return QMatrix(np.zeros(img.dims), r, g, b)


def decode(q: QMatrix, tol: float = 0.1) -> ColorImage:
    """
    Drop the real plane and clamp to [0, 1].

    :param tol: Largest accepted ‖w‖ relative to the imaginary planes. Low
        rank restoration of a pure matrix leaks a small real part.
    :raises DomainError: If the real plane is not negligible.
    """
    planes = q.planes
    w = float(np.linalg.norm(planes[0]))
    rest = float(np.linalg.norm(planes[1:]))
    if w > tol * max(rest, 1.0):
        raise DomainError(f"Matrix is not pure: real plane norm {w:.3e} against {rest:.3e}")
    return ColorImage(np.clip(np.moveaxis(planes[1:], 0, -1), 0.0, 1.0))


def split_channels(q: QMatrix) -> List[QMatrix]:
    """
    :return: One matrix per imaginary plane, carried in the real plane. This is
        the channelwise representation of a color image.
    """
    return [QMatrix(q.planes[c]) for c in (1, 2, 3)]


def merge_channels(channels: Sequence[QMatrix]) -> QMatrix:
    """Inverse of :func:`split_channels`; imaginary parts are discarded."""
    if len(channels) != 3:
        raise ShapeError(f"Expected 3 channels, got {len(channels)}")
    shape = channels[0].shape
    for c in channels:
        if c.shape != shape:
            raise ShapeError(f"Channel shapes differ: {c.shape} and {shape}")
    return QMatrix(np.zeros(shape), *(c.w for c in channels))


def encode_channels(img: ColorImage) -> List[QMatrix]:
    return split_channels(encode(img))


def decode_channels(channels: Sequence[QMatrix]) -> ColorImage:
    return decode(merge_channels(channels))


def add_gaussian_noise(q: QMatrix, tau: float, seed: int) -> QMatrix:
    """
    Add i.i.d. Gaussian noise of standard deviation τ/255 to the three
    imaginary planes. The real plane is untouched.

    :param tau: Noise level on the 0-255 scale.
    :raises DomainError: If tau is negative.
    """
    if tau < 0:
        raise DomainError(f"Noise level must be >= 0, got {tau}")
    if tau == 0:
        return q
    rng = np.random.default_rng(seed)
    planes = q.planes.copy()
    planes[1:] += rng.standard_normal((3,) + q.shape) * (tau / 255.0)
    return QMatrix.from_planes(planes)


def sample_mask(dims: Tuple[int, int], chi: float, seed: int) -> ObservationMask:
    """
    Each pixel is missing independently with probability χ.

    :param chi: Missing rate in [0, 1].
    :raises DomainError: If chi is out of range.
    """
    if not 0 <= chi <= 1:
        raise DomainError(f"Missing rate must be in [0, 1], got {chi}")
    rng = np.random.default_rng(seed)
    return ObservationMask(rng.uniform(size=dims) >= chi)


def synthetic_low_rank_image(rows: int, cols: int, rank: int, seed: int = 0) -> ColorImage:
    """
    Color image whose quaternion encoding has rank at most ``rank``: a sum of
    real rank-one patterns, each tinted by a pure quaternion color, scaled so
    the maximum is 1.
    """
    rng = np.random.default_rng(seed)
    pixels = np.zeros((rows, cols, 3))
    for _ in range(rank):
        pattern = np.outer(rng.uniform(0, 1, rows), rng.uniform(0, 1, cols))
        pixels += pattern[:, :, None] * rng.uniform(0, 1, 3)[None, None, :]
    peak = pixels.max()
    return ColorImage(pixels / peak if peak > 0 else pixels)


def _as_array(a) -> np.ndarray:
    if isinstance(a, ColorImage):
        return a.pixels
    if isinstance(a, QMatrix):
        return decode(a).pixels
    return np.asarray(a, dtype=np.float64)


def _check_dims(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise ShapeError(f"Image shapes differ: {a.shape} and {b.shape}")


def psnr(a, b) -> float:
    """
    Peak signal-to-noise ratio with peak 1, MSE over all pixels and channels.

    :return: PSNR in dB, ``math.inf`` for identical images.
    :raises ShapeError: On a dimension mismatch.
    """
    a, b = _as_array(a), _as_array(b)
    _check_dims(a, b)
    mse = mean_squared_error(a, b)
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def masked_psnr(a, b, mask: ObservationMask) -> float:
    """
    PSNR restricted to the pixels outside Ω.

    :return: PSNR in dB, ``math.inf`` if nothing is missing or the missing
        pixels agree.
    """
    a, b = _as_array(a), _as_array(b)
    _check_dims(a, b)
    if mask.dims != a.shape[:2]:
        raise ShapeError(f"Mask shape {mask.dims} does not match image shape {a.shape[:2]}")
    missing = mask.missing
    if not missing.any():
        return math.inf
    mse = mean_squared_error(a[missing], b[missing])
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def ssim(a, b) -> float:
    """
    Single-scale SSIM, 11x11 Gaussian window with σ = 1.5, data range 1,
    averaged over the three channels.
    """
    a, b = _as_array(a), _as_array(b)
    _check_dims(a, b)
    if np.array_equal(a, b):
        return 1.0
    return float(
        structural_similarity(
            a,
            b,
            gaussian_weights=True,
            sigma=1.5,
            use_sample_covariance=False,
            data_range=1.0,
            channel_axis=-1,
        )
    )


def quantize(img: ColorImage) -> np.ndarray:
    """:return: uint8 pixels, clamped and rounded half up."""
    return np.floor(np.clip(img.pixels, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def _png_depth(path: PathLike) -> int:
    with open(path, "rb") as f:
        head = f.read(_PNG_DEPTH_OFFSET + 1)
    if head[:8] != _PNG_SIGNATURE or len(head) <= _PNG_DEPTH_OFFSET:
        return 0
    return head[_PNG_DEPTH_OFFSET]


def load_image(path: PathLike) -> ColorImage:
    """
    Load an 8-bit PNG or a binary PPM (P6).

    :raises FileFormatError: If the file cannot be read, is 16-bit or has an
        unsupported pixel mode.
    """
    try:
        if _png_depth(path) == 16:
            raise FileFormatError(path, "16-bit images are not supported")
        with Image.open(path) as im:
            if im.mode not in _ACCEPTED_MODES:
                raise FileFormatError(path, f"unsupported pixel mode {im.mode}")
            data = np.asarray(im.convert("RGB"), dtype=np.float64)
    except FileFormatError:
        raise
    except OSError as e:
        raise FileFormatError(path, f"cannot read image: {e}") from e
    return ColorImage(data / 255.0)


def save_image(path: PathLike, img: ColorImage):
    """
    Save as PNG or binary PPM, chosen from the file suffix.

    :raises FileFormatError: On an unknown suffix or a write failure.
    """
    fmt = _IMAGE_SUFFIXES.get(Path(path).suffix.lower())
    if fmt is None:
        raise FileFormatError(path, "unsupported image format, use .png or .ppm")
    try:
        Image.fromarray(quantize(img)).save(path, format=fmt)
    except OSError as e:
        raise FileFormatError(path, f"cannot write image: {e}") from e


def load_mask(path: PathLike) -> ObservationMask:
    """
    Load a mask from a grayscale PNG (255 = observed) or run-length text.

    :raises FileFormatError: If the file is unreadable or malformed.
    """
    if Path(path).suffix.lower() == ".png":
        try:
            with Image.open(path) as im:
                data = np.asarray(im.convert("L"))
        except OSError as e:
            raise FileFormatError(path, f"cannot read mask: {e}") from e
        if not np.all((data == 0) | (data == 255)):
            raise FileFormatError(path, "mask PNG must only contain 0 and 255")
        return ObservationMask(data == 255)
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise FileFormatError(path, f"cannot read mask: {e.strerror}") from e
    return ObservationMask.from_rle(text, path)


def save_mask(path: PathLike, mask: ObservationMask):
    try:
        if Path(path).suffix.lower() == ".png":
            Image.fromarray(mask.observed.astype(np.uint8) * 255).save(path, format="PNG")
        else:
            Path(path).write_text(mask.to_rle())
    except OSError as e:
        raise FileFormatError(path, f"cannot write mask: {e}") from e


class TestEncoding(unittest.TestCase):
    def test_round_trip(self):
        img = synthetic_low_rank_image(8, 6, 2, seed=1)
        q = encode(img)
        self.assertTrue(np.all(q.w == 0))
        self.assertEqual(decode(q), img)
        self.assertEqual(encode(ColorImage(np.zeros((3, 4, 3)))), QMatrix.zeros(3, 4))

    def test_decode_clamps_and_checks_purity(self):
        q = QMatrix(np.zeros((2, 2)), np.full((2, 2), 1.5), -np.ones((2, 2)))
        out = decode(q)
        self.assertEqual(out.pixels.max(), 1.0)
        self.assertEqual(out.pixels.min(), 0.0)
        with self.assertRaises(DomainError):
            decode(QMatrix(np.ones((2, 2))))

    def test_channels(self):
        img = synthetic_low_rank_image(5, 7, 3, seed=2)
        channels = encode_channels(img)
        self.assertEqual(len(channels), 3)
        self.assertTrue(np.array_equal(channels[1].w, img.channels[1]))
        self.assertEqual(decode_channels(channels), img)

    def test_synthetic_rank(self):
        from .qsvd import rank

        img = synthetic_low_rank_image(20, 16, 3, seed=3)
        self.assertLessEqual(rank(encode(img), 1e-9), 3)
        self.assertAlmostEqual(img.pixels.max(), 1.0)


class TestDegradation(unittest.TestCase):
    def test_noise(self):
        q = encode(synthetic_low_rank_image(256, 256, 2))
        self.assertIs(add_gaussian_noise(q, 0, seed=1), q)
        noisy = add_gaussian_noise(q, 20, seed=1)
        self.assertTrue(np.all(noisy.w == 0))
        variance = np.var((noisy - q).planes[1:])
        self.assertLess(abs(variance / (20 / 255) ** 2 - 1), 0.05)
        self.assertEqual(noisy, add_gaussian_noise(q, 20, seed=1))
        with self.assertRaises(DomainError):
            add_gaussian_noise(q, -1, seed=1)

    def test_noise_is_channelwise(self):
        img = synthetic_low_rank_image(16, 16, 2, seed=4)
        noisy = add_gaussian_noise(encode(img), 10, seed=5)
        channels = split_channels(noisy)
        for c in range(3):
            self.assertTrue(np.array_equal(channels[c].w, noisy.planes[c + 1]))
        self.assertEqual(merge_channels(channels), noisy)

    def test_mask_rates(self):
        self.assertTrue(sample_mask((8, 8), 0.0, seed=0).observed.all())
        self.assertFalse(sample_mask((8, 8), 1.0, seed=0).observed.any())
        mask = sample_mask((512, 512), 0.5, seed=0)
        n = 512 * 512
        self.assertLess(abs(mask.fraction - 0.5), 3 * math.sqrt(0.25 / n))
        with self.assertRaises(DomainError):
            sample_mask((2, 2), 1.5, seed=0)

    def test_projection(self):
        rng = np.random.default_rng(6)
        mask = ObservationMask(rng.uniform(size=(9, 7)) < 0.5)
        a, b = QMatrix.random(rng, 9, 7), QMatrix.random(rng, 9, 7)
        self.assertEqual(mask.apply(mask.apply(a)), mask.apply(a))
        self.assertAlmostEqual(inner(mask.apply(a), b), inner(a, mask.apply(b)), places=12)
        with self.assertRaises(ShapeError):
            mask.apply(QMatrix.zeros(7, 9))

    def test_rle(self):
        mask = ObservationMask(np.array([[True, True, False], [False, False, True]]))
        text = mask.to_rle()
        self.assertEqual(text, "2 3\n0 2 3 1\n")
        self.assertTrue(np.array_equal(ObservationMask.from_rle(text).observed, mask.observed))
        with self.assertRaises(FileFormatError):
            ObservationMask.from_rle("2 3\n1 1\n")
        with self.assertRaises(FileFormatError):
            ObservationMask.from_rle("two three\n")


class TestMetrics(unittest.TestCase):
    def test_psnr(self):
        img = synthetic_low_rank_image(16, 16, 2)
        self.assertEqual(psnr(img, img), math.inf)
        gray = ColorImage(np.full((4, 4, 3), 0.5))
        black = ColorImage(np.zeros((4, 4, 3)))
        self.assertAlmostEqual(psnr(gray, black), 10 * math.log10(4), places=10)
        with self.assertRaises(ShapeError):
            psnr(gray, ColorImage(np.zeros((4, 5, 3))))

    def test_psnr_decreases_with_noise(self):
        q = encode(synthetic_low_rank_image(64, 64, 3))
        values = [psnr(q.planes[1:], add_gaussian_noise(q, tau, seed=7).planes[1:]) for tau in (5, 10, 20, 40)]
        self.assertEqual(values, sorted(values, reverse=True))

    def test_masked_psnr(self):
        a = ColorImage(np.zeros((4, 4, 3)))
        b = ColorImage(np.zeros((4, 4, 3)))
        b.pixels[0, 0] = 0.5
        mask = ObservationMask(np.ones((4, 4), dtype=bool))
        self.assertEqual(masked_psnr(a, b, mask), math.inf)
        mask.observed[0, 0] = False
        self.assertAlmostEqual(masked_psnr(a, b, mask), 10 * math.log10(4), places=10)

    def test_ssim(self):
        rng = np.random.default_rng(8)
        a = ColorImage(rng.uniform(size=(32, 32, 3)))
        b = ColorImage(rng.uniform(size=(32, 32, 3)))
        self.assertEqual(ssim(a, a), 1.0)
        self.assertAlmostEqual(ssim(a, b), ssim(b, a), places=12)
        self.assertLess(ssim(a, b), 0.5)


class TestFiles(unittest.TestCase):
    def test_png_and_ppm_round_trip(self):
        rng = np.random.default_rng(9)
        img = ColorImage(rng.integers(0, 256, (5, 7, 3)) / 255.0)
        with tempfile.TemporaryDirectory() as tmp:
            for name in ("a.png", "a.ppm"):
                path = os.path.join(tmp, name)
                save_image(path, img)
                back = load_image(path)
                self.assertTrue(np.array_equal(quantize(back), quantize(img)))
            with self.assertRaises(FileFormatError):
                save_image(os.path.join(tmp, "a.jpg"), img)

    def test_ppm_header(self):
        data = b"P6\n2 2\n255\n" + bytes(range(12))
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "tiny.ppm")
            with open(path, "wb") as f:
                f.write(data)
            img = load_image(path)
        self.assertEqual(img.dims, (2, 2))
        self.assertAlmostEqual(img.pixels[1, 1, 2], 11 / 255)

    def test_rejections(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "deep.png")
            Image.fromarray(np.full((3, 3), 40000, dtype=np.uint16)).save(path)
            with self.assertRaises(FileFormatError):
                load_image(path)
            with self.assertRaises(FileFormatError):
                load_image(os.path.join(tmp, "missing.png"))
            junk = os.path.join(tmp, "junk.png")
            with open(junk, "wb") as f:
                f.write(b"not an image")
            with self.assertRaises(FileFormatError):
                load_image(junk)

    def test_quantize_rounds_half_up(self):
        img = ColorImage(np.array([[[0.5, -0.25, 2.0]]]))
        self.assertEqual(quantize(img).tolist(), [[[128, 0, 255]]])

    def test_mask_files(self):
        mask = sample_mask((6, 5), 0.4, seed=3)
        with tempfile.TemporaryDirectory() as tmp:
            for name in ("m.png", "m.txt"):
                path = os.path.join(tmp, name)
                save_mask(path, mask)
                self.assertTrue(np.array_equal(load_mask(path).observed, mask.observed))


if __name__ == "__main__":
    unittest.main()
