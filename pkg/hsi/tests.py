import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from core.exceptions import ConfigError, DataFormatError, LabelError, ShapeMismatchError
from hsi.datasets import SampleSet
from hsi.io import load_cube, load_labels, load_split_file, save_cube, save_labels, save_split_file
from hsi.models import HsiCube, LabelField
from hsi.preprocessing import PatchExtractor, check_patch_size, extract_sample, normalize, stratified_fraction
from hsi.registry import DATASETS, get_dataset_info
from hsi.scene import build_scene
from hsi.splits import enumerate_splits
from hsi.synthetic import make_low_rank_cube, make_synthetic_scene


def ramp_cube(height=5, width=6, bands=3):
    return HsiCube(np.arange(height * width * bands, dtype=np.float32).reshape(height, width, bands))


class TestCube:
    def test_rejects_non_finite(self):
        data = np.zeros((2, 2, 2), dtype=np.float32)
        data[0, 0, 1] = np.nan
        with pytest.raises(DataFormatError):
            HsiCube(data)

    def test_rejects_wrong_rank(self):
        with pytest.raises(DataFormatError):
            HsiCube(np.zeros((4, 4), dtype=np.float32))

    def test_label_range_checked_against_class_names(self):
        with pytest.raises(LabelError):
            LabelField(np.array([[0, 3]]), class_names=['a', 'b'])


class TestNormalize:
    def test_per_band_min_max(self):
        cube = normalize(ramp_cube())
        assert cube.data.dtype == np.float32
        np.testing.assert_allclose(cube.data.min(axis=(0, 1)), 0.0)
        np.testing.assert_allclose(cube.data.max(axis=(0, 1)), 1.0)

    def test_constant_band_maps_to_zero(self):
        data = np.ones((3, 3, 2), dtype=np.float32)
        data[..., 1] = np.arange(9).reshape(3, 3)
        cube = normalize(HsiCube(data))
        assert (cube.data[..., 0] == 0).all()

    @given(arrays(np.float32, (4, 4, 3), elements=st.floats(-1e3, 1e3, width=32)))
    def test_idempotent(self, data):
        once = normalize(HsiCube(data))
        twice = normalize(once)
        np.testing.assert_allclose(twice.data, once.data, atol=1e-6)
        assert once.data.min() >= 0.0 and once.data.max() <= 1.0


class TestPatches:
    def test_patch_size_must_be_odd(self):
        with pytest.raises(ConfigError):
            check_patch_size(4, 10, 10)

    def test_patch_size_bounded_by_reflection(self):
        check_patch_size(9, 5, 7)
        with pytest.raises(ConfigError):
            check_patch_size(11, 5, 7)

    def test_interior_patch_is_a_slice(self):
        cube = ramp_cube()
        sample = extract_sample(cube, (2, 3), 3, label=4)
        np.testing.assert_array_equal(sample.patch, cube.data[1:4, 2:5])
        assert sample.label == 4
        assert sample.patch_size == 3 and sample.bands == 3

    def test_border_reflects_without_repeating_edge(self):
        cube = ramp_cube()
        patch = extract_sample(cube, (0, 0), 3).patch
        np.testing.assert_array_equal(patch[0, 0], cube.data[1, 1])
        np.testing.assert_array_equal(patch[1, 1], cube.data[0, 0])
        np.testing.assert_array_equal(patch[0, 1], cube.data[1, 0])

    def test_single_pixel_patch(self):
        cube = ramp_cube()
        np.testing.assert_array_equal(extract_sample(cube, (4, 5), 1).patch[0, 0], cube.data[4, 5])

    def test_vectorized_matches_single(self):
        cube = ramp_cube()
        extractor = PatchExtractor(cube, 5)
        centers = np.array([[0, 0], [4, 5], [2, 1]])
        batch = extractor.patches(centers)
        for patch, center in zip(batch, centers):
            np.testing.assert_array_equal(patch, extractor.extract(center).patch)

    def test_center_outside_image(self):
        with pytest.raises(ShapeMismatchError):
            PatchExtractor(ramp_cube(), 3).extract((5, 0))


class TestIO:
    def test_cube_pair_and_single_file(self, tmp_path):
        cube = ramp_cube()
        header = save_cube(cube, tmp_path / 'scene.json')
        assert header.with_suffix('.raw').stat().st_size == cube.data.nbytes
        np.testing.assert_array_equal(load_cube(header).data, cube.data)

        single = save_cube(cube, tmp_path / 'scene.bin', single_file=True)
        np.testing.assert_array_equal(load_cube(single).data, cube.data)

    def test_truncated_payload(self, tmp_path):
        header = save_cube(ramp_cube(), tmp_path / 'scene.json')
        payload = header.with_suffix('.raw')
        payload.write_bytes(payload.read_bytes()[:-4])
        with pytest.raises(DataFormatError):
            load_cube(header)

    def test_labels_keep_class_names(self, tmp_path):
        labels = LabelField(np.array([[0, 1], [2, 2]]), class_names=['water', 'soil'])
        loaded = load_labels(save_labels(labels, tmp_path / 'labels.json'))
        np.testing.assert_array_equal(loaded.labels, labels.labels)
        assert loaded.class_names == ['water', 'soil']

    def test_labels_are_not_cubes(self, tmp_path):
        header = save_cube(ramp_cube(), tmp_path / 'scene.json')
        with pytest.raises(DataFormatError):
            load_labels(header)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataFormatError):
            load_cube(tmp_path / 'absent.json')

    def test_split_file(self, tmp_path):
        path = save_split_file({2: [(0, 1)], 1: [(1, 1), (0, 0)]}, tmp_path / 'split.json')
        assert json.loads(path.read_text()) == {'train': {'1': [[1, 1], [0, 0]], '2': [[0, 1]]}}
        assert load_split_file(path) == {1: [(1, 1), (0, 0)], 2: [(0, 1)]}


class TestSplits:
    labels = LabelField(np.array([
        [1, 1, 0, 2],
        [0, 2, 2, 0],
        [1, 0, 0, 2],
    ]), class_names=['a', 'b'])

    def write(self, tmp_path, train):
        return save_split_file(train, tmp_path / 'split.json')

    def test_partition(self, tmp_path):
        split = enumerate_splits(self.labels, self.write(tmp_path, {1: [(0, 0)], 2: [(1, 2)]}))
        assert split.counts() == {'pretrain': 5, 'train': 2, 'test': 5}
        np.testing.assert_array_equal(split.train, [[0, 0], [1, 2]])
        np.testing.assert_array_equal(split.test, [[0, 1], [0, 3], [1, 1], [2, 0], [2, 3]])
        np.testing.assert_array_equal(split.test_labels, [1, 2, 2, 1, 2])
        train, test = split.per_class_counts(2)
        assert train.tolist() == [1, 1] and test.tolist() == [2, 3]

    def test_without_split_file_every_labeled_pixel_is_test(self):
        split = enumerate_splits(self.labels)
        assert split.counts() == {'pretrain': 5, 'train': 0, 'test': 7}

    @pytest.mark.parametrize('train', [
        {1: [(0, 2)]},           # unlabeled pixel
        {2: [(0, 0)]},           # wrong class
        {1: [(0, 0), (0, 0)]},   # duplicate
        {1: [(5, 0)]},           # outside the scene
    ])
    def test_invalid_coordinates(self, tmp_path, train):
        with pytest.raises(LabelError):
            enumerate_splits(self.labels, self.write(tmp_path, train))


class TestRegistry:
    @pytest.mark.parametrize('key, train, test, pretrain', [
        ('indian_pines', 695, 9671, 10659),
        ('pavia_university', 3921, 40002, 163477),
        ('houston2013', 2832, 12197, 649816),
    ])
    def test_published_totals(self, key, train, test, pretrain):
        info = DATASETS[key]
        assert (info.train_total, info.test_total, info.pretrain_count) == (train, test, pretrain)
        height, width, _ = info.shape
        assert height * width == train + test + pretrain
        assert len(info.train_counts) == len(info.test_counts) == info.num_classes

    def test_unknown_dataset(self):
        with pytest.raises(ConfigError):
            get_dataset_info('salinas')


class TestSamples:
    def test_batch_targets_are_zero_based(self):
        extractor = PatchExtractor(normalize(ramp_cube()), 3)
        samples = SampleSet(extractor, np.array([[1, 1], [2, 2]]), np.array([3, 1]))
        patches, targets = samples.batch([1, 0])
        assert tuple(patches.shape) == (2, 3, 3, 3)
        assert targets.tolist() == [0, 2]

    def test_unlabeled_batch(self):
        samples = SampleSet(PatchExtractor(ramp_cube(), 3), np.array([[0, 0]]))
        _, targets = samples.batch([0])
        assert targets is None

    def test_stratified_fraction_keeps_every_class(self, rng):
        labels = np.array([1] * 10 + [2] * 3 + [3])
        coords = np.arange(len(labels))
        kept, kept_labels = stratified_fraction(coords, labels, 0.2, rng)
        assert np.bincount(kept_labels, minlength=4)[1:].tolist() == [2, 1, 1]
        assert (np.diff(kept) > 0).all()

    def test_stratified_fraction_range(self, rng):
        with pytest.raises(ConfigError):
            stratified_fraction(np.arange(3), np.ones(3), 0.0, rng)


class TestSynthetic:
    def test_scene_layout(self):
        scene = make_synthetic_scene(classes=3, bands=16, size=32, seed=0)
        assert scene.cube.shape == (32, 32, 16)
        assert scene.labels.num_classes == 3
        assert set(np.unique(scene.labels.labels)) <= {0, 1, 2, 3}
        assert all(len(coords) == 20 for coords in scene.train_by_class.values())

    def test_low_rank_cube(self):
        cube = make_low_rank_cube(size=8, bands=12, rank=2, seed=1)
        singular = np.linalg.svd(cube.data.reshape(-1, 12).astype(np.float64), compute_uv=False)
        assert singular[2] < 1e-4 * singular[0]

    def test_build_scene_normalizes(self, synthetic_scene):
        scene = build_scene('synthetic', synthetic_scene.cube, synthetic_scene.labels)
        assert scene.cube.data.max() <= 1.0
        assert scene.split.counts()['train'] == 0
        assert len(scene.pretrain_set(3)) == int((synthetic_scene.labels.labels == 0).sum())
