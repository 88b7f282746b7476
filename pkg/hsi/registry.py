"""
Published facts about the three benchmark scenes: shapes, class names and
the per-class sizes of their standard train/test splits.
"""

from dataclasses import dataclass

from core.exceptions import ConfigError


@dataclass(frozen=True)
class DatasetInfo:
    key: str
    title: str
    shape: tuple
    class_names: tuple
    train_counts: tuple
    test_counts: tuple
    pretrain_count: int

    @property
    def num_classes(self):
        return len(self.class_names)

    @property
    def train_total(self):
        return sum(self.train_counts)

    @property
    def test_total(self):
        return sum(self.test_counts)


DATASETS = {
    'indian_pines': DatasetInfo(
        key='indian_pines',
        title='Indian Pines',
        shape=(145, 145, 200),
        class_names=(
            'Corn Notill', 'Corn Mintill', 'Corn', 'Grass Pasture', 'Grass Trees',
            'Hay Windrowed', 'Soybean Notill', 'Soybean Mintill', 'Soybean Clean',
            'Wheat', 'Woods', 'Building Grass Trees Drives', 'Stone Steel Towers',
            'Alfalfa', 'Grass Pasture Mowed', 'Oats',
        ),
        train_counts=(50, 50, 50, 50, 50, 50, 50, 50, 50, 50, 50, 50, 50, 15, 15, 15),
        test_counts=(1384, 784, 184, 447, 697, 439, 918, 2418, 564, 162, 1244, 330, 45, 39, 11, 5),
        pretrain_count=10659,
    ),
    'pavia_university': DatasetInfo(
        key='pavia_university',
        title='University of Pavia',
        shape=(610, 340, 103),
        class_names=(
            'Asphalt', 'Meadows', 'Gravel', 'Trees', 'Metal Sheets',
            'Bare Soil', 'Bitumen', 'Bricks', 'Shadows',
        ),
        train_counts=(548, 540, 392, 524, 265, 532, 375, 514, 231),
        test_counts=(6304, 18146, 1815, 2912, 1113, 4572, 981, 3364, 795),
        pretrain_count=163477,
    ),
    'houston2013': DatasetInfo(
        key='houston2013',
        title='Houston 2013',
        shape=(349, 1905, 144),
        class_names=(
            'Healthy Grass', 'Stressed Grass', 'Synthetic Grass', 'Tree', 'Soil',
            'Water', 'Residential', 'Commercial', 'Road', 'Highway', 'Railway',
            'Parking Lot 1', 'Parking Lot 2', 'Tennis Court', 'Running Track',
        ),
        train_counts=(198, 190, 192, 188, 186, 182, 196, 191, 193, 191, 181, 192, 184, 181, 187),
        test_counts=(1053, 1064, 505, 1056, 1056, 143, 1072, 1053, 1059, 1036, 1054, 1041, 285, 247, 473),
        pretrain_count=649816,
    ),
}


def get_dataset_info(key):
    try:
        return DATASETS[key]
    except KeyError:
        raise ConfigError(f"unknown dataset {key!r}; known: {sorted(DATASETS)}") from None
