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
Non-local self-similarity denoising: similar patches are stacked as columns of
a low-rank quaternion matrix, restored with PL-ADMM and put back in place.
"""

import dataclasses
import logging
import os
import unittest
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple
from unittest import mock

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .exceptions import ConfigError, DivergenceError, ShapeError
from .quaternion import QMatrix, frobenius_norm
from .solvers import SolverConfig, pl_admm_denoise
from .transforms import make_transform

logger = logging.getLogger(__name__)

Position = Tuple[int, int]

THREADS_ENV = "QSLR_THREADS"


def default_workers() -> int:
    """
    :return: Worker count from ``QSLR_THREADS``, else the CPU count.
    :raises ConfigError: If the variable is not a positive integer.
    """
    value = os.environ.get(THREADS_ENV)
    if value is None:
        return os.cpu_count() or 1
    try:
        workers = int(value)
    except ValueError as e:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {value!r}") from e
    if workers < 1:
        raise ConfigError(f"{THREADS_ENV} must be >= 1, got {workers}")
    return workers


@dataclass(frozen=True)
class NssConfig:
    """
    :param patch_side: Patch side, a group matrix has patch_side² rows.
    :param num_neighbors: Patches per group, the anchor included.
    :param search_window: Side of the square search window around an anchor.
    :param stride: Anchor grid step, patch_side // 2 when None.
    :param relaxation: Weight of the residual added back between passes.
    :param outer_passes: Number of match, restore and aggregate passes.
    :param remove_mean: Match patches after subtracting their mean.
    :param workers: Concurrent group restorations, see :func:`default_workers`.
    """

    patch_side: int = 10
    num_neighbors: int = 70
    search_window: int = 30
    stride: Optional[int] = None
    relaxation: float = 0.1
    outer_passes: int = 4
    remove_mean: bool = False
    workers: Optional[int] = None

    def __post_init__(self):
        if self.patch_side < 1:
            raise ConfigError(f"patch_side must be >= 1, got {self.patch_side}")
        if self.search_window < self.patch_side:
            raise ConfigError(
                f"Search window {self.search_window} is smaller than the patch side {self.patch_side}"
            )
        if self.num_neighbors < 1:
            raise ConfigError(f"num_neighbors must be >= 1, got {self.num_neighbors}")
        if self.stride is not None and self.stride < 1:
            raise ConfigError(f"stride must be >= 1, got {self.stride}")
        if not 0 <= self.relaxation <= 1:
            raise ConfigError(f"relaxation must be in [0, 1], got {self.relaxation}")
        if self.outer_passes < 1:
            raise ConfigError(f"outer_passes must be >= 1, got {self.outer_passes}")
        if self.workers is not None and self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")

    @property
    def step(self) -> int:
        return self.stride if self.stride is not None else max(self.patch_side // 2, 1)

    def check_image(self, rows: int, cols: int):
        """
        :raises ShapeError: If a patch does not fit in the image.
        :raises ConfigError: If a search window holds fewer patches than a
            group needs.
        """
        p = self.patch_side
        if rows < p or cols < p:
            raise ShapeError(f"Image {rows}x{cols} is smaller than the patch side {p}")
        count = (min(self.search_window, rows) - p + 1) * (min(self.search_window, cols) - p + 1)
        if count < self.num_neighbors:
            raise ConfigError(
                f"Search window holds {count} patches, {self.num_neighbors} neighbors requested"
            )


@dataclass(eq=False)
class PatchGroup:
    """
    d × s matrix whose columns are the vectorized member patches, the anchor
    first.
    """

    matrix: QMatrix
    anchor_pos: Position
    member_positions: List[Position]


class RestoredGroups(list):
    """
    Restored group matrices in input order. ``failed`` lists the indices of
    groups passed through unmodified after a solver divergence.
    """

    def __init__(self, matrices=(), failed=()):
        super().__init__(matrices)
        self.failed = list(failed)


def anchor_grid(length: int, patch_side: int, stride: int) -> List[int]:
    """
    :return: Anchor offsets along one axis, the last one clamped so the final
        patch touches the border.
    """
    grid = list(range(0, length - patch_side + 1, stride))
    if grid[-1] != length - patch_side:
        grid.append(length - patch_side)
    return grid


def _window_start(anchor: int, length: int, patch_side: int, window: int) -> int:
    start = anchor + patch_side // 2 - window // 2
    return min(max(start, 0), length - window)


def patch_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Squared quaternion Frobenius distance between two patches."""
    return float(np.sum((a - b) ** 2))


def _patches(planes: np.ndarray, p: int) -> np.ndarray:
    # (4, rows - p + 1, cols - p + 1, p, p) read-only view.
    return sliding_window_view(planes, (p, p), axis=(1, 2))


def extract_and_match(image: QMatrix, nss: NssConfig) -> List[PatchGroup]:
    """
    Block matching. For every anchor of the stride grid, the patches of the
    search window are ranked by distance to the anchor patch, ties in raster
    order. The anchor is member 0, followed by the num_neighbors − 1 closest
    other patches.

    :raises ShapeError: If the image is smaller than a patch.
    :raises ConfigError: If a window holds too few patches.
    """
    rows, cols = image.shape
    nss.check_image(rows, cols)
    p, s = nss.patch_side, nss.num_neighbors
    win_r, win_c = min(nss.search_window, rows), min(nss.search_window, cols)
    patches = _patches(image.planes, p)
    if nss.remove_mean:
        keys = patches - patches.mean(axis=(3, 4), keepdims=True)
    else:
        keys = patches
    groups = []
    for r in anchor_grid(rows, p, nss.step):
        r0 = _window_start(r, rows, p, win_r)
        for c in anchor_grid(cols, p, nss.step):
            c0 = _window_start(c, cols, p, win_c)
            candidates = keys[:, r0 : r0 + win_r - p + 1, c0 : c0 + win_c - p + 1]
            anchor = keys[:, r, c][:, None, None]
            dist = np.sum((candidates - anchor) ** 2, axis=(0, 3, 4)).ravel()
            width = win_c - p + 1
            own = (r - r0) * width + (c - c0)
            order = np.argsort(dist, kind="stable")
            chosen = [own] + [int(i) for i in order if i != own][: s - 1]
            positions = [(r0 + i // width, c0 + i % width) for i in chosen]
            block = np.stack([patches[:, pr, pc].reshape(4, p * p) for pr, pc in positions], axis=2)
            groups.append(PatchGroup(QMatrix.from_planes(block), (r, c), positions))
    logger.debug("Matched %d groups of %d patches", len(groups), s)
    return groups


def _restore(group: PatchGroup, cfg: SolverConfig) -> Tuple[QMatrix, bool]:
    d, s = group.matrix.shape
    try:
        result = pl_admm_denoise(group.matrix, cfg, transform=make_transform(cfg.transform, d, s))
    except DivergenceError as e:
        logger.warning("Group at %s diverged, passed through: %s", group.anchor_pos, e)
        return group.matrix, False
    return result.x, True


def denoise_groups(groups: Sequence[PatchGroup], cfg: SolverConfig, nss: NssConfig) -> RestoredGroups:
    """
    Restore every group with :func:`pl_admm_denoise` on a thread pool.

    :raises ConfigError: If there are no groups.
    """
    if not groups:
        raise ConfigError("No patch groups to denoise")
    workers = nss.workers or default_workers()
    if workers == 1:
        outcomes = [_restore(g, cfg) for g in groups]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(lambda g: _restore(g, cfg), groups))
    failed = [i for i, (_, ok) in enumerate(outcomes) if not ok]
    if failed:
        logger.warning("%d of %d groups passed through after divergence", len(failed), len(groups))
    return RestoredGroups([m for m, _ in outcomes], failed)


def coverage(positions: Sequence[Sequence[Position]], image_dims: Tuple[int, int], patch_side: int) -> np.ndarray:
    """:return: Number of patches covering each pixel."""
    counts = np.zeros(image_dims, dtype=np.int64)
    for members in positions:
        for r, c in members:
            counts[r : r + patch_side, c : c + patch_side] += 1
    return counts


def aggregate(
    groups_out: Sequence[QMatrix],
    positions: Sequence[Sequence[Position]],
    image_dims: Tuple[int, int],
    fallback: Optional[QMatrix] = None,
) -> QMatrix:
    """
    Put every restored patch back and average the overlaps with uniform
    weights. Groups and members are summed in order.

    :param fallback: Value of pixels no patch covers, zero when None.
    :raises ShapeError: If a patch falls outside the image.
    """
    rows, cols = image_dims
    sums = np.zeros((4, rows, cols))
    counts = np.zeros((rows, cols))
    for matrix, members in zip(groups_out, positions):
        d = matrix.rows
        p = int(round(d**0.5))
        if p * p != d:
            raise ShapeError(f"Group matrix has {d} rows, not a square patch size")
        planes = matrix.planes
        for j, (r, c) in enumerate(members):
            if r < 0 or c < 0 or r + p > rows or c + p > cols:
                raise ShapeError(f"Patch at ({r}, {c}) falls outside the {rows}x{cols} image")
            sums[:, r : r + p, c : c + p] += planes[:, :, j].reshape(4, p, p)
            counts[r : r + p, c : c + p] += 1
    covered = counts > 0
    out = np.zeros((4, rows, cols)) if fallback is None else fallback.planes.copy()
    out[:, covered] = sums[:, covered] / counts[covered]
    return QMatrix.from_planes(out)


def nss_denoise(y: QMatrix, cfg: SolverConfig, nss: NssConfig) -> QMatrix:
    """
    Iterated NSS restoration. Pass t works on Y⁽ᵗ⁾ = X̂ + relaxation·(Y − X̂),
    X̂ being the previous pass output (Y initially).
    """
    x_hat = y
    for t in range(1, nss.outer_passes + 1):
        y_t = y if t == 1 else x_hat + (y - x_hat) * nss.relaxation
        groups = extract_and_match(y_t, nss)
        restored = denoise_groups(groups, cfg, nss)
        x_hat = aggregate(restored, [g.member_positions for g in groups], y.shape, fallback=y_t)
        logger.info(
            "NSS pass %d/%d: %d groups, %d passed through", t, nss.outer_passes, len(groups), len(restored.failed)
        )
    return x_hat


def _sawtooth(rows: int, cols: int, period: int) -> QMatrix:
    ramp = ((np.arange(rows)[:, None] + np.arange(cols)[None, :]) % period) / period
    return QMatrix(np.zeros((rows, cols)), 0.1 + 0.8 * ramp, 0.5 * np.ones((rows, cols)), 0.9 - 0.6 * ramp)


def _fast_config(**changes) -> SolverConfig:
    values = dict(tau=20 / 255, lam=0.0, max_outer=20, record_timing=False)
    values.update(changes)
    return SolverConfig(**values)


class TestMatching(unittest.TestCase):
    def test_anchor_grid(self):
        grid = anchor_grid(512, 10, 5)
        self.assertEqual(len(grid), 102)
        self.assertEqual(grid[-1], 502)
        expected = sorted({min(i * 5, 502) for i in range(200)})
        self.assertEqual(grid, expected)
        self.assertEqual(anchor_grid(20, 10, 10), [0, 10])

    def test_config_checks(self):
        with self.assertRaises(ConfigError):
            NssConfig(patch_side=10, search_window=8)
        with self.assertRaises(ConfigError):
            NssConfig(relaxation=1.5)
        self.assertEqual(NssConfig(patch_side=7).step, 3)
        with self.assertRaises(ShapeError):
            extract_and_match(QMatrix.zeros(5, 20), NssConfig(patch_side=6, search_window=6, num_neighbors=1))
        with self.assertRaises(ConfigError):
            extract_and_match(QMatrix.zeros(12, 12), NssConfig(patch_side=10, search_window=12, num_neighbors=10))

    def test_anchor_first(self):
        rng = np.random.default_rng(0)
        image = QMatrix.random(rng, 24, 20, pure=True)
        nss = NssConfig(patch_side=4, num_neighbors=6, search_window=9, stride=3)
        for g in extract_and_match(image, nss):
            self.assertEqual(g.member_positions[0], g.anchor_pos)
            self.assertEqual(g.matrix.shape, (16, 6))
            r, c = g.anchor_pos
            self.assertTrue(np.array_equal(g.matrix.planes[:, :, 0], image.planes[:, r : r + 4, c : c + 4].reshape(4, 16)))

    def test_constant_image_raster_order(self):
        image = QMatrix(np.ones((16, 16)))
        nss = NssConfig(patch_side=4, num_neighbors=5, search_window=8, stride=4)
        group = extract_and_match(image, nss)[0]
        self.assertEqual(group.anchor_pos, (0, 0))
        self.assertEqual(group.member_positions, [(0, 0), (0, 1), (0, 2), (0, 3), (0, 4)])

    def test_distance(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            a, b = rng.standard_normal((2, 4, 5, 5))
            self.assertEqual(patch_distance(a, b), patch_distance(b, a))
            self.assertEqual(patch_distance(a, a), 0.0)
            self.assertGreater(patch_distance(a, b), 0.0)

    def test_mean_removal(self):
        image = _sawtooth(20, 20, 5) + QMatrix(np.zeros((20, 20)), np.tile([0.0, 0.3], (20, 10)))
        plain = extract_and_match(image, NssConfig(patch_side=5, num_neighbors=4, search_window=15, stride=5))
        centered = extract_and_match(
            image, NssConfig(patch_side=5, num_neighbors=4, search_window=15, stride=5, remove_mean=True)
        )
        self.assertEqual(len(plain), len(centered))
        self.assertEqual(centered[0].member_positions[0], (0, 0))


class TestAggregation(unittest.TestCase):
    def test_non_overlapping_identity(self):
        image = QMatrix.random(np.random.default_rng(2), 12, 16, pure=True)
        nss = NssConfig(patch_side=4, num_neighbors=1, search_window=4, stride=4)
        groups = extract_and_match(image, nss)
        out = aggregate([g.matrix for g in groups], [g.member_positions for g in groups], image.shape)
        self.assertEqual(out, image)

    def test_overlapping_equal_patches(self):
        patch = QMatrix.from_planes(np.full((4, 4, 1), 0.25))
        out = aggregate([patch, patch], [[(0, 0)], [(0, 1)]], (2, 3))
        self.assertTrue(np.all(out.planes == 0.25))

    def test_uncovered_keeps_fallback(self):
        patch = QMatrix.from_planes(np.zeros((4, 1, 1)))
        fallback = QMatrix(np.ones((2, 2)))
        out = aggregate([patch], [[(0, 0)]], (2, 2), fallback=fallback)
        self.assertEqual(out.w.tolist(), [[0.0, 1.0], [1.0, 1.0]])
        with self.assertRaises(ShapeError):
            aggregate([patch], [[(2, 0)]], (2, 2))

    def test_coverage_matches_enumeration(self):
        image = QMatrix.random(np.random.default_rng(3), 21, 17, pure=True)
        nss = NssConfig(patch_side=5, num_neighbors=3, search_window=11, stride=3)
        groups = extract_and_match(image, nss)
        positions = [g.member_positions for g in groups]
        counts = coverage(positions, image.shape, 5)
        brute = np.zeros(image.shape, dtype=np.int64)
        for i in range(21):
            for j in range(17):
                brute[i, j] = sum(
                    1 for members in positions for r, c in members if r <= i < r + 5 and c <= j < c + 5
                )
        self.assertTrue(np.array_equal(counts, brute))
        self.assertTrue(np.all(counts > 0))


class TestGroupDenoising(unittest.TestCase):
    def setUp(self):
        rng = np.random.default_rng(4)
        image = _sawtooth(20, 20, 5) + QMatrix.random(rng, 20, 20, pure=True) * (20 / 255)
        self.nss = NssConfig(patch_side=5, num_neighbors=8, search_window=11, stride=5, workers=2)
        self.groups = extract_and_match(image, self.nss)
        self.cfg = _fast_config()

    def test_order_and_determinism(self):
        first = denoise_groups(self.groups, self.cfg, self.nss)
        second = denoise_groups(self.groups, self.cfg, dataclasses.replace(self.nss, workers=1))
        self.assertEqual(len(first), len(self.groups))
        self.assertEqual(first.failed, [])
        for a, b in zip(first, second):
            self.assertEqual(a, b)
        positions = [g.member_positions for g in self.groups]
        reference = aggregate(first, positions, (20, 20))
        rng = np.random.default_rng(5)
        for _ in range(3):
            perm = rng.permutation(len(self.groups))
            shuffled = denoise_groups([self.groups[i] for i in perm], self.cfg, self.nss)
            restored = [None] * len(perm)
            for out, i in zip(shuffled, perm):
                restored[i] = out
            self.assertEqual(aggregate(restored, positions, (20, 20)), reference)

    def test_rank_one_group_is_shrunk(self):
        rng = np.random.default_rng(6)
        clean = QMatrix.from_planes(np.einsum("c,i,j->cij", [0, 0.5, 0.3, 0.8], rng.uniform(0.5, 1, 25), np.ones(8)))
        noisy = clean + QMatrix.random(rng, 25, 8, pure=True) * 0.05
        group = PatchGroup(noisy, (0, 0), [(0, 0)] * 8)
        from .qsvd import qsvd

        out = denoise_groups([group], _fast_config(tau=0.05, max_outer=50), self.nss)[0]
        before = qsvd(noisy, full_matrices=False).sigma
        after = qsvd(out, full_matrices=False).sigma
        self.assertTrue(np.all(after[1:] < before[1:]))

    def test_clean_group_kept(self):
        group = self.groups[0]
        cfg = _fast_config(tau=1 / 255, max_outer=50)
        out = denoise_groups([group], cfg, self.nss)[0]
        self.assertLessEqual(frobenius_norm(out - group.matrix), 1e-3 * frobenius_norm(group.matrix))

    def test_divergence_passes_group_through(self):
        real = pl_admm_denoise
        calls = []

        def flaky(y, cfg, transform=None, callback=None):
            calls.append(1)
            if len(calls) == 2:
                raise DivergenceError("boom")
            return real(y, cfg, transform=transform, callback=callback)

        with mock.patch(f"{__name__}.pl_admm_denoise", side_effect=flaky):
            out = denoise_groups(self.groups[:3], self.cfg, dataclasses.replace(self.nss, workers=1))
        self.assertEqual(out.failed, [1])
        self.assertIs(out[1], self.groups[1].matrix)

    def test_empty(self):
        with self.assertRaises(ConfigError):
            denoise_groups([], self.cfg, self.nss)


class TestNssDenoise(unittest.TestCase):
    def test_single_pass(self):
        rng = np.random.default_rng(7)
        y = _sawtooth(16, 16, 4) + QMatrix.random(rng, 16, 16, pure=True) * 0.05
        nss = NssConfig(patch_side=4, num_neighbors=6, search_window=8, stride=2, outer_passes=1, workers=1)
        cfg = _fast_config(tau=0.05)
        groups = extract_and_match(y, nss)
        expected = aggregate(denoise_groups(groups, cfg, nss), [g.member_positions for g in groups], y.shape, fallback=y)
        self.assertEqual(nss_denoise(y, cfg, nss), expected)

    def test_zero_relaxation_restarts_from_estimate(self):
        rng = np.random.default_rng(8)
        y = _sawtooth(16, 16, 4) + QMatrix.random(rng, 16, 16, pure=True) * 0.05
        nss = NssConfig(patch_side=4, num_neighbors=6, search_window=8, stride=4, outer_passes=2, relaxation=0.0, workers=1)
        cfg = _fast_config(tau=0.05)
        seen = []
        real = extract_and_match

        def record(image, nss_cfg):
            seen.append(image)
            return real(image, nss_cfg)

        with mock.patch(f"{__name__}.extract_and_match", side_effect=record):
            out = nss_denoise(y, cfg, nss)
        single = nss_denoise(y, cfg, dataclasses.replace(nss, outer_passes=1))
        self.assertEqual(len(seen), 2)
        self.assertEqual(seen[0], y)
        self.assertEqual(seen[1], single)
        self.assertNotEqual(out, single)

    def test_clean_input_not_damaged(self):
        from .imaging import encode, psnr, synthetic_low_rank_image

        truth = encode(synthetic_low_rank_image(24, 24, 2, seed=9))
        nss = NssConfig(patch_side=6, num_neighbors=10, search_window=12, stride=3, outer_passes=2, workers=1)
        out = nss_denoise(truth, _fast_config(tau=1 / 255, max_outer=50), nss)
        self.assertGreaterEqual(psnr(out.planes[1:], truth.planes[1:]), 40.0)

    def test_repetitive_texture_beats_global_model(self):
        from .config import build_config
        from .imaging import add_gaussian_noise, psnr

        truth = _sawtooth(64, 64, 10)
        noisy = add_gaussian_noise(truth, 30, seed=10)
        flat_cfg = build_config("desk-denoise-tau30", overrides={"solver": {"record_timing": False}})
        grouped_cfg = build_config("desk-nss-tau30", overrides={"solver": {"record_timing": False}})
        flat = pl_admm_denoise(noisy, flat_cfg.solver).x
        grouped = nss_denoise(noisy, grouped_cfg.solver, grouped_cfg.nss)
        noisy_psnr = psnr(noisy.planes[1:], truth.planes[1:])
        flat_psnr = psnr(flat.planes[1:], truth.planes[1:])
        grouped_psnr = psnr(grouped.planes[1:], truth.planes[1:])
        self.assertGreater(flat_psnr, noisy_psnr)
        self.assertGreaterEqual(grouped_psnr, flat_psnr)


if __name__ == "__main__":
    unittest.main()
