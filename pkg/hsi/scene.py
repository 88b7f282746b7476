"""
A loaded, normalized scene with its split, handing out sample sets for a
given patch size.
"""

import logging
from dataclasses import dataclass

from hsi.datasets import SampleSet
from hsi.io import load_cube, load_labels
from hsi.models import HsiCube, LabelField, SplitSpec
from hsi.preprocessing import PatchExtractor, normalize
from hsi.registry import DATASETS
from hsi.splits import enumerate_splits

logger = logging.getLogger(__name__)


@dataclass
class Scene:
    name: str
    cube: HsiCube
    labels: LabelField
    split: SplitSpec

    @property
    def num_classes(self):
        return self.labels.num_classes

    @property
    def bands(self):
        return self.cube.bands

    def extractor(self, patch_size) -> PatchExtractor:
        return PatchExtractor(self.cube, patch_size)

    def train_set(self, patch_size) -> SampleSet:
        return SampleSet(self.extractor(patch_size), self.split.train, self.split.train_labels)

    def test_set(self, patch_size) -> SampleSet:
        return SampleSet(self.extractor(patch_size), self.split.test, self.split.test_labels)

    def pretrain_set(self, patch_size) -> SampleSet:
        return SampleSet(self.extractor(patch_size), self.split.pretrain)


def build_scene(name, cube: HsiCube, labels: LabelField, split_file=None) -> Scene:
    """Normalize the cube, check it against its labels and enumerate the split."""
    labels.check_matches(cube)
    info = DATASETS.get(name)
    generic = [f"class_{c}" for c in range(1, labels.num_classes + 1)]
    if info is not None and labels.class_names == generic and info.num_classes == labels.num_classes:
        labels = LabelField(labels.labels, class_names=list(info.class_names))
    return Scene(name=name, cube=normalize(cube), labels=labels, split=enumerate_splits(labels, split_file))


def load_scene(name, cube_path, labels_path, split_path=None) -> Scene:
    scene = build_scene(name, load_cube(cube_path), load_labels(labels_path), split_path)
    logger.info("Scene %s ready: %d classes, %s", name, scene.num_classes, scene.split.counts())
    return scene
