import json

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image
from sklearn.metrics import balanced_accuracy_score, cohen_kappa_score, confusion_matrix

from core.exceptions import ConfigError, DataFormatError, LabelError, ShapeMismatchError
from evaluation.maps import PALETTE, export_map, model_predictor, palette_sidecar, predict_map, render_map
from evaluation.metrics import ConfusionMatrix, metrics
from evaluation.reports import EvaluationReport, evaluate, render_report, report_json, write_report
from hsi.datasets import SampleSet
from hsi.models import HsiCube, LabelField
from hsi.preprocessing import PatchExtractor
from hsi.registry import DATASETS


def pairs_from_counts(counts):
    """Expand a confusion matrix into (truth, predicted) label vectors."""
    truth, predicted = [], []
    for row, col in np.ndindex(*counts.shape):
        truth += [row + 1] * int(counts[row, col])
        predicted += [col + 1] * int(counts[row, col])
    return np.array(truth, dtype=np.int64), np.array(predicted, dtype=np.int64)


class TestConfusionMatrix:
    def test_accumulates_one_based_labels(self):
        cm = ConfusionMatrix.from_predictions([1, 1, 2, 3], [1, 2, 2, 1], classes=3)
        assert cm.counts.tolist() == [[1, 1, 0], [0, 1, 0], [1, 0, 0]]
        assert cm.total == 4

    def test_order_of_pairs_does_not_matter(self, rng):
        truth = rng.integers(1, 6, size=500)
        predicted = rng.integers(1, 6, size=500)
        order = rng.permutation(500)
        first = ConfusionMatrix.from_predictions(truth, predicted, 5)
        second = ConfusionMatrix.from_predictions(truth[order], predicted[order], 5)
        assert np.array_equal(first.counts, second.counts)

    def test_merge_is_a_sum(self, rng):
        truth = rng.integers(1, 4, size=90)
        predicted = rng.integers(1, 4, size=90)
        whole = ConfusionMatrix.from_predictions(truth, predicted, 3)
        parts = [ConfusionMatrix.from_predictions(truth[i:i + 30], predicted[i:i + 30], 3) for i in (0, 30, 60)]
        assert np.array_equal((parts[0] + parts[1] + parts[2]).counts, whole.counts)
        assert np.array_equal((parts[2] + (parts[0] + parts[1])).counts, whole.counts)

    def test_invalid(self):
        with pytest.raises(LabelError):
            ConfusionMatrix.from_predictions([0], [1], 2)
        with pytest.raises(ShapeMismatchError):
            ConfusionMatrix.from_predictions([1, 2], [1], 2)
        with pytest.raises(ShapeMismatchError):
            ConfusionMatrix.empty(2) + ConfusionMatrix.empty(3)
        with pytest.raises(ConfigError):
            ConfusionMatrix(np.array([[1, -1], [0, 0]]))


class TestMetrics:
    def test_perfect_diagonal(self):
        scores = metrics(ConfusionMatrix(np.diag([5, 3, 9])))
        assert (scores.overall_accuracy, scores.average_accuracy, scores.kappa) == (1.0, 1.0, 1.0)

    def test_hand_case(self):
        scores = metrics(ConfusionMatrix(np.array([[40, 10], [20, 30]])))
        assert scores.overall_accuracy == pytest.approx(0.70)
        assert scores.average_accuracy == pytest.approx(0.70)
        assert scores.kappa == pytest.approx(0.40)
        np.testing.assert_allclose(scores.per_class, [0.8, 0.6])

    def test_empty_rows_excluded_from_average(self):
        scores = metrics(ConfusionMatrix(np.array([[5, 0, 0], [0, 0, 0], [1, 0, 3]])))
        np.testing.assert_allclose(scores.per_class, [1.0, 0.0, 0.75])
        assert scores.average_accuracy == pytest.approx(0.875)

    def test_single_class_agreement(self):
        assert metrics(ConfusionMatrix(np.array([[7, 0], [0, 0]]))).kappa == 1.0

    def test_empty_matrix(self):
        with pytest.raises(ConfigError):
            metrics(ConfusionMatrix.empty(4))

    def test_always_first_class(self):
        info = DATASETS['indian_pines']
        truth = np.repeat(np.arange(1, info.num_classes + 1), info.test_counts)
        scores = metrics(ConfusionMatrix.from_predictions(truth, np.ones_like(truth), info.num_classes))
        assert scores.overall_accuracy == 1384 / 9671
        assert scores.average_accuracy == pytest.approx(1 / 16)

    def test_matches_sklearn(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            classes = int(rng.integers(1, 9))
            counts = rng.integers(0, 20, size=(classes, classes))
            if counts.sum() == 0:
                continue
            truth, predicted = pairs_from_counts(counts)
            labels = list(range(1, classes + 1))
            cm = ConfusionMatrix.from_predictions(truth, predicted, classes)
            assert np.array_equal(cm.counts, confusion_matrix(truth, predicted, labels=labels))

            scores = metrics(cm)
            assert scores.overall_accuracy == pytest.approx(np.mean(truth == predicted), abs=1e-12)
            assert scores.average_accuracy == pytest.approx(balanced_accuracy_score(truth, predicted), abs=1e-12)
            if len(set(truth) | set(predicted)) > 1:
                assert scores.kappa == pytest.approx(cohen_kappa_score(truth, predicted, labels=labels), abs=1e-12)

    def test_random_guessing_has_no_agreement(self):
        rng = np.random.default_rng(1)
        truth = np.repeat(np.arange(1, 5), 2500)
        predicted = rng.integers(1, 5, size=truth.size)
        assert abs(metrics(ConfusionMatrix.from_predictions(truth, predicted, 4)).kappa) < 0.05

    @given(st.integers(2, 6).flatmap(lambda c: st.tuples(
        arrays(np.int64, (c, c), elements=st.integers(0, 50)),
        st.permutations(list(range(c))),
    )))
    def test_class_relabeling_invariance(self, case):
        counts, order = case
        assume(counts.sum() > 0)
        order = np.array(order)
        original = metrics(ConfusionMatrix(counts))
        relabeled = metrics(ConfusionMatrix(counts[np.ix_(order, order)]))
        assert relabeled.overall_accuracy == pytest.approx(original.overall_accuracy, abs=1e-12)
        assert relabeled.average_accuracy == pytest.approx(original.average_accuracy, abs=1e-12)
        assert relabeled.kappa == pytest.approx(original.kappa, abs=1e-12)
        np.testing.assert_allclose(relabeled.per_class, original.per_class[order])
        assert 0.0 <= original.overall_accuracy <= 1.0 and 0.0 <= original.average_accuracy <= 1.0
        assert -1.0 <= original.kappa <= 1.0


def one_hot_scene():
    """Labels 0..2 on a 4 x 4 grid; band c - 1 is 1 exactly where the label is c."""
    labels = np.array([
        [1, 1, 0, 2],
        [0, 2, 2, 0],
        [1, 0, 0, 2],
        [1, 1, 2, 0],
    ])
    data = np.stack([(labels == 1), (labels == 2)], axis=-1).astype(np.float32)
    return HsiCube(data), LabelField(labels, class_names=['field', 'road'])


def center_model(patches):
    """Logits read straight off the centre pixel."""
    center = patches.shape[1] // 2
    return patches[:, center, center, :]


class TestEvaluate:
    def test_oracle_model(self):
        cube, labels = one_hot_scene()
        coords = np.argwhere(labels.labels > 0)
        test = SampleSet(PatchExtractor(cube, 3), coords, labels.labels[coords[:, 0], coords[:, 1]])
        report = evaluate(center_model, test, 2, labels.class_names, batch_size=4)
        assert report.confusion.counts.tolist() == [[5, 0], [0, 5]]
        assert report.support.tolist() == [5, 5]
        assert report.scores.kappa == 1.0

    def test_needs_labels(self):
        cube, _ = one_hot_scene()
        with pytest.raises(ConfigError):
            evaluate(center_model, SampleSet(PatchExtractor(cube, 1), np.array([[0, 0]])), 2)

    def test_report_formatting(self, tmp_path):
        cm = ConfusionMatrix(np.array([[40, 10], [20, 30]]))
        report = EvaluationReport(confusion=cm, scores=metrics(cm), class_names=['Corn', 'Woods'])
        text = render_report(report, title='synthetic')
        lines = text.splitlines()
        assert lines[0] == 'synthetic'
        assert lines[2].split()[-1] == '80.00' and lines[3].split()[-1] == '60.00'
        assert text.endswith('0.4000')
        assert any(line.split()[:2] == ['OA', '(%)'] and line.split()[-1] == '70.00' for line in lines)
        assert any(line.split()[0] == 'Total' and line.split()[-1] == '100' for line in lines)

        data = report_json(report, seed=3, config_hash='abc')
        assert data['OA'] == pytest.approx(0.7) and data['kappa'] == pytest.approx(0.4)
        assert data['support'] == [50, 50] and data['total'] == 100
        assert data['seed'] == 3 and data['config_hash'] == 'abc'

        text_path, json_path = write_report(report, tmp_path, 'run', seed=3)
        assert text_path == tmp_path / 'reports' / 'run.txt'
        assert json.loads(json_path.read_text())['confusion'] == [[40, 10], [20, 30]]


def identity_predictor(labels):
    return lambda coords: labels.labels[coords[:, 0], coords[:, 1]]


class TestMaps:
    def test_ground_truth_through_identity(self):
        _, labels = one_hot_scene()
        label_map = predict_map(identity_predictor(labels), labels)
        assert np.array_equal(label_map, labels.labels)
        image = np.asarray(render_map(label_map))
        assert np.array_equal(image, np.asarray(PALETTE, dtype=np.uint8)[labels.labels])
        assert (image[labels.labels == 0] == 0).all()

    def test_all_pixels(self):
        _, labels = one_hot_scene()
        label_map = predict_map(lambda coords: np.full(len(coords), 2), labels, all_pixels=True)
        assert (label_map == 2).all()

    def test_model_predictor(self):
        cube, labels = one_hot_scene()
        predictor = model_predictor(center_model, PatchExtractor(cube, 3), batch_size=3)
        assert np.array_equal(predict_map(predictor, labels), labels.labels)

    def test_export_writes_pixmap_and_palette(self, tmp_path):
        _, labels = one_hot_scene()
        path = tmp_path / 'maps' / 'scene.ppm'
        export_map(identity_predictor(labels), labels, path)
        assert path.read_bytes().startswith(b'P6')
        with Image.open(path) as image:
            assert image.size == (4, 4)
        sidecar = json.loads(palette_sidecar(path).read_text())
        assert sidecar['background'] == [0, 0, 0]
        assert sidecar['classes']['2'] == {'name': 'road', 'rgb': list(PALETTE[2])}

    def test_sixteen_classes_and_background(self, rng, tmp_path):
        names = list(DATASETS['indian_pines'].class_names)
        labels = LabelField(rng.integers(0, 17, size=(20, 20)), class_names=names)
        assert set(np.unique(labels.labels)) == set(range(17))
        path = tmp_path / 'ip.ppm'
        export_map(identity_predictor(labels), labels, path)
        with Image.open(path) as image:
            colors = {tuple(pixel) for pixel in np.asarray(image.convert('RGB')).reshape(-1, 3)}
        assert len(colors) == 17

    def test_palette_too_small(self, tmp_path):
        _, labels = one_hot_scene()
        with pytest.raises(ConfigError):
            export_map(identity_predictor(labels), labels, tmp_path / 'm.ppm', palette=PALETTE[:2])

    def test_unwritable_destination(self, tmp_path):
        _, labels = one_hot_scene()
        (tmp_path / 'taken').write_text('')
        with pytest.raises(DataFormatError):
            export_map(identity_predictor(labels), labels, tmp_path / 'taken' / 'map.ppm')
