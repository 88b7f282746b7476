import json
import logging

import numpy as np
import pytest
import torch
from click.testing import CliRunner

from core.config import RunConfig, config_hash, validate_document, with_defaults
from core.exceptions import ConfigError, NumericalError
from core.management import cli, find_commands
from core.management.base import BaseCommand
from core.management.commands.ablate import GRIDS, grid_settings
from core.manifest import file_digest, input_digests, write_manifest
from core.training import EpochRecord, SeedStreams, batch_order, check_finite, read_loss_log, write_loss_log
from factoformer_project import settings
from factoformer_project.runlog import RunIdFilter, get_logger, set_run_id
from factoformer_project.tracing import trace_function
from pretrain.objective import masked_mse_batch
from transformer.checkpoints import load_checkpoint

DATASET = {'name': 'indian_pines', 'cube': 'ip/cube.json', 'labels': 'ip/labels.json'}


class TestRunConfig:
    def test_defaults(self):
        config = RunConfig.from_dict({'dataset': DATASET})
        assert config.patch_size == 7 and config.band_group == 1 and config.joint_group == 10
        assert config.widths['spectral'] == settings.SPECTRAL_ENCODER
        assert config.widths['spatial'] == settings.SPATIAL_ENCODER
        pretrain = config.pretrain_config('spectral')
        assert (pretrain.epochs, pretrain.lr, pretrain.ratio, pretrain.batch_size) == (200, 5e-4, 0.7, 32)
        finetune = config.finetune_config()
        assert (finetune.lr, finetune.epochs, finetune.freeze_encoders) == (3e-4, 80, False)

    def test_per_scene_finetune_defaults(self):
        document = {'dataset': {**DATASET, 'name': 'houston2013'}}
        assert (RunConfig.from_dict(document).finetune_config().lr,
                RunConfig.from_dict(document).finetune_config().epochs) == (2e-3, 40)

    def test_partial_widths_keep_defaults(self):
        config = RunConfig.from_dict({'dataset': DATASET, 'encoders': {'spatial': {'layers': 2}}})
        assert config.widths['spatial'] == {**settings.SPATIAL_ENCODER, 'layers': 2}

    @pytest.mark.parametrize('document, fragment', [
        ({'dataset': DATASET, 'pretrain': {'ratio': 1.0}}, 'pretrain.ratio'),
        ({'dataset': DATASET, 'patch_size': 0}, 'patch_size'),
        ({'dataset': DATASET, 'colour': 'red'}, 'colour'),
        ({'dataset': {'name': 'x'}}, 'dataset'),
        ({'dataset': DATASET, 'finetune': {'data_fraction': 0}}, 'finetune.data_fraction'),
    ])
    def test_schema_errors_name_the_field(self, document, fragment):
        with pytest.raises(ConfigError, match=fragment.replace('.', r'\.')):
            RunConfig.from_dict(document)

    def test_semantic_errors(self):
        with pytest.raises(ConfigError, match='odd'):
            RunConfig.from_dict({'dataset': DATASET, 'patch_size': 6})
        with pytest.raises(ConfigError, match='divisible'):
            RunConfig.from_dict({'dataset': DATASET, 'encoders': {'spectral': {'heads': 3}}})

    def test_override(self):
        config = RunConfig.from_dict({
            'dataset': DATASET, 'pretrain': {'ratio_by_mode': {'spatial': 0.5}},
        })
        assert config.pretrain_config('spatial').ratio == 0.5
        assert config.pretrain_config('spectral').ratio == 0.7

        changed = config.override(**{'pretrain.ratio': 0.6, 'seed': None, 'patch_size': 9})
        assert changed.pretrain_config('spatial').ratio == 0.6
        assert changed.patch_size == 9 and changed.seed == config.seed
        assert config.patch_size == 7
        with pytest.raises(ConfigError):
            config.override(**{'pretrain.ratio': 1.0})

    def test_hash(self):
        config = RunConfig.from_dict({'dataset': DATASET})
        assert config.hash == RunConfig.from_dict({'dataset': DATASET}).hash
        assert config.hash != config.override(seed=1).hash
        assert config_hash({'a': 1, 'b': 2}) == config_hash({'b': 2, 'a': 1})

    def test_with_defaults_keeps_the_document(self):
        document = {'dataset': DATASET}
        with_defaults(document)
        assert document == {'dataset': DATASET}
        validate_document(with_defaults(document))

    def test_paths(self, tmp_path, monkeypatch):
        (tmp_path / 'ip').mkdir()
        (tmp_path / 'ip' / 'cube.json').write_text('{}')
        path = tmp_path / 'run.json'
        path.write_text(json.dumps({'dataset': DATASET, 'out': 'results'}))
        monkeypatch.setattr(settings, 'DATA_ROOT', tmp_path / 'data')

        config = RunConfig.load(path)
        inputs = config.input_paths()
        assert inputs['cube'] == tmp_path / 'ip' / 'cube.json'
        assert inputs['labels'] == tmp_path / 'data' / 'ip' / 'labels.json'
        assert 'split' not in inputs
        assert config.output_dir() == tmp_path / 'results'
        assert config.output_dir(tmp_path / 'elsewhere') == tmp_path / 'elsewhere'

    def test_load_errors(self, tmp_path):
        with pytest.raises(ConfigError):
            RunConfig.load(tmp_path / 'absent.json')
        (tmp_path / 'broken.json').write_text('{"dataset": ')
        with pytest.raises(ConfigError):
            RunConfig.load(tmp_path / 'broken.json')


class TestManifest:
    def test_digests_cover_payloads(self, tmp_path):
        header = tmp_path / 'cube.json'
        header.write_text('{}')
        (tmp_path / 'cube.raw').write_bytes(b'\x00' * 8)
        digests = input_digests({'cube': header, 'split': None, 'labels': tmp_path / 'absent.json'})
        assert digests['cube']['sha256'] == file_digest(header)
        assert digests['cube']['payload_sha256'] == file_digest(tmp_path / 'cube.raw')
        assert digests['labels']['missing'] is True
        assert 'split' not in digests

    def test_write(self, tmp_path):
        path = write_manifest(tmp_path, 'pretrain', {'seed': 3}, 'abc', 3, 1)
        manifest = json.loads(path.read_text())
        assert path.name == 'manifest_pretrain.json'
        assert manifest['config_hash'] == 'abc' and manifest['seed'] == 3
        assert set(manifest['versions']) >= {'torch', 'numpy', 'python'}


class TestTraining:
    def test_streams_are_keyed(self):
        streams = SeedStreams(7)
        first = streams.rng('mask', 3, 11).random(4)
        assert np.array_equal(first, SeedStreams(7).rng('mask', 3, 11).random(4))
        assert not np.array_equal(first, streams.rng('mask', 3, 12).random(4))
        assert not np.array_equal(first, streams.rng('shuffle', 3, 11).random(4))
        assert not np.array_equal(first, SeedStreams(8).rng('mask', 3, 11).random(4))

    def test_batch_order(self, rng):
        batches = batch_order(10, 4, rng)
        assert [len(batch) for batch in batches] == [4, 4, 2]
        assert sorted(np.concatenate(batches).tolist()) == list(range(10))
        assert np.concatenate(batch_order(5, 2)).tolist() == [0, 1, 2, 3, 4]

    def test_loss_log(self, tmp_path):
        records = [EpochRecord(1, 0.5, 1e-3), EpochRecord(2, 0.25, 1e-3, accuracy=0.75)]
        path = write_loss_log(records, tmp_path / 'logs' / 'run.ndjson')
        assert 'accuracy' not in json.loads(path.read_text().splitlines()[0])
        assert read_loss_log(path) == records

    def test_check_finite(self):
        check_finite(torch.tensor(1.0), 'loss')
        with pytest.raises(NumericalError):
            check_finite(torch.tensor(float('nan')), 'loss')


class TestRunLogging:
    def test_records_carry_the_run_id(self):
        records = []
        handler = logging.Handler()
        handler.emit = records.append
        target = logging.getLogger('training')
        target.addHandler(handler)
        set_run_id('abcd1234')
        try:
            get_logger('training').warning('epoch done')
        finally:
            set_run_id(None)
            target.removeHandler(handler)
        assert records[-1].run_id == 'abcd1234'

    def test_filter_fills_missing_run_id(self):
        record = logging.LogRecord('x', logging.INFO, __file__, 1, 'msg', None, None)
        assert RunIdFilter().filter(record)
        assert record.run_id == '-'

    def test_file_handlers_only_with_a_log_dir(self, tmp_path):
        assert 'run_file' not in settings.build_logging_config()['handlers']
        handlers = settings.build_logging_config(tmp_path / 'logs')['handlers']
        assert handlers['training_file']['filename'] == str(tmp_path / 'logs' / 'training.log')
        assert settings.parse_log_size('10MB') == 10 * 1024 * 1024


class TestTracing:
    @pytest.fixture
    def spans(self, monkeypatch):
        from opentelemetry.sdk.trace import TracerProvider
        from opentelemetry.sdk.trace.export import SimpleSpanProcessor
        from opentelemetry.sdk.trace.export.in_memory_span_exporter import InMemorySpanExporter

        exporter = InMemorySpanExporter()
        provider = TracerProvider()
        provider.add_span_processor(SimpleSpanProcessor(exporter))
        monkeypatch.setattr(settings, 'OTEL_ENABLED', True)
        monkeypatch.setattr('factoformer_project.tracing.get_tracer', provider.get_tracer)
        return exporter

    def test_disabled_calls_straight_through(self, monkeypatch):
        monkeypatch.setattr(settings, 'OTEL_ENABLED', False)
        monkeypatch.setattr('factoformer_project.tracing.get_tracer', None)
        assert trace_function(name='stage')(lambda: 5)() == 5

    def test_span_per_call(self, spans):
        @trace_function(name='pretrain', attributes={'stage': 'pretrain'})
        def run(epochs):
            return [0.5] * epochs

        assert run(2) == [0.5, 0.5]
        (span,) = spans.get_finished_spans()
        assert span.name == 'pretrain'
        assert span.attributes['stage'] == 'pretrain'
        assert span.attributes['function.result_type'] == 'list'

    def test_failure_marks_the_span(self, spans):
        from opentelemetry.trace import StatusCode

        @trace_function()
        def diverge():
            raise NumericalError('non-finite loss')

        with pytest.raises(NumericalError):
            diverge()
        (span,) = spans.get_finished_spans()
        assert span.name.endswith('.diverge')
        assert span.status.status_code == StatusCode.ERROR
        assert span.events[0].name == 'exception'


def invoke(*args):
    return CliRunner().invoke(cli, [str(arg) for arg in args])


class TestCommandLine:
    def test_lists_commands(self):
        result = invoke('--help')
        assert result.exit_code == 0
        for name in ('pretrain', 'finetune', 'evaluate', 'export_map', 'ablate', 'profile', 'synthesize'):
            assert name in find_commands(settings.BASE_DIR / 'core' / 'management')
            assert name in result.output

    def test_full_pipeline(self, scene_dir):
        config = scene_dir / 'config.json'
        runs = scene_dir / 'runs'

        for mode in ('spectral', 'spatial'):
            result = invoke('pretrain', '--config', config, '--mode', mode)
            assert result.exit_code == 0, result.output
        spectral = runs / 'checkpoints' / 'pretrain_spectral.ckpt'
        spatial = runs / 'checkpoints' / 'pretrain_spatial.ckpt'
        assert load_checkpoint(spectral).config['mode'] == 'spectral'
        manifest = json.loads((runs / 'manifest_pretrain.json').read_text())
        assert manifest['seed'] == 7 and 'payload_sha256' in manifest['inputs']['cube']
        assert (runs / 'logs' / 'training.log').exists()

        result = invoke('finetune', '--config', config, '--from-pretrained', spectral, spatial)
        assert result.exit_code == 0, result.output
        assert 'OA' in result.output
        model = runs / 'checkpoints' / 'finetune_factoformer_pretrained.ckpt'
        report = json.loads((runs / 'reports' / 'finetune_factoformer_pretrained.json').read_text())
        assert set(report) >= {'OA', 'AA', 'kappa', 'per_class', 'confusion', 'seed', 'config_hash'}

        result = invoke('evaluate', '--config', config, '--model', model)
        assert result.exit_code == 0, result.output
        evaluated = json.loads((runs / 'reports' / 'evaluate_factoformer.json').read_text())
        assert evaluated['confusion'] == report['confusion']

        result = invoke('export-map', '--config', config, '--model', model, '--all-pixels')
        assert result.exit_code == 0, result.output
        assert (runs / 'maps' / 'synthetic_factoformer_all.ppm').read_bytes().startswith(b'P6')
        assert (runs / 'maps' / 'synthetic_factoformer_all.palette.json').exists()

    def test_scratch_single_branch(self, scene_dir):
        result = invoke('finetune', '--config', scene_dir / 'config.json', '--arch', 'spatial', '--scratch',
                        '--epochs', '1')
        assert result.exit_code == 0, result.output
        assert (scene_dir / 'runs' / 'checkpoints' / 'finetune_spatial_scratch.ckpt').exists()

    def test_pretraining_is_reproducible(self, scene_dir):
        logs = []
        for out in ('a', 'b'):
            result = invoke('pretrain', '--config', scene_dir / 'config.json', '--mode', 'spatial',
                            '--out', scene_dir / out, '--threads', 1)
            assert result.exit_code == 0, result.output
            logs.append((scene_dir / out / 'logs' / 'pretrain_spatial_loss.ndjson').read_bytes())
        assert logs[0] == logs[1]

    def test_overrides(self, scene_dir):
        result = invoke('pretrain', '--config', scene_dir / 'config.json', '--mode', 'spectral',
                        '--ratio', 0.5, '--epochs', 1, '--seed', 3)
        assert result.exit_code == 0, result.output
        checkpoint = load_checkpoint(scene_dir / 'runs' / 'checkpoints' / 'pretrain_spectral.ckpt')
        assert checkpoint.config['pretrain']['ratio'] == 0.5
        assert checkpoint.manifest['seed'] == 3 and checkpoint.manifest['epoch'] == 1

    def test_invalid_ratio_exits_with_two(self, scene_dir):
        result = invoke('pretrain', '--config', scene_dir / 'config.json', '--mode', 'spectral', '--ratio', 1.0)
        assert result.exit_code == 2
        assert 'pretrain.ratio' in result.output

    def test_missing_checkpoint_exits_with_two(self, scene_dir):
        result = invoke('finetune', '--config', scene_dir / 'config.json',
                        '--from-pretrained', scene_dir / 'nope.ckpt', scene_dir / 'nope2.ckpt')
        assert result.exit_code == 2
        assert 'not found' in result.output

    def test_initialization_must_be_chosen(self, scene_dir):
        result = invoke('finetune', '--config', scene_dir / 'config.json')
        assert result.exit_code == 2
        assert '--scratch' in result.output

    def test_numerical_failures_exit_with_three(self):
        class Diverging(BaseCommand):
            def handle(self, **options):
                raise NumericalError('non-finite loss')

        result = CliRunner().invoke(Diverging.as_click_command('diverging'), [])
        assert result.exit_code == 3
        assert 'non-finite loss' in result.output

    def test_diverging_pretraining_exits_with_three(self, scene_dir, monkeypatch):
        monkeypatch.setattr('pretrain.tasks.masked_mse_batch',
                            lambda *args: masked_mse_batch(*args) * float('nan'))
        result = invoke('pretrain', '--config', scene_dir / 'config.json', '--mode', 'spectral')
        assert result.exit_code == 3
        assert 'non-finite pre-training loss' in result.output
        assert not (scene_dir / 'runs' / 'checkpoints' / 'pretrain_spectral.ckpt').exists()

    def test_profile(self, scene_dir):
        result = invoke('profile', '--config', scene_dir / 'config.json')
        assert result.exit_code == 0, result.output
        assert 'MFLOPs' in result.output
        data = json.loads((scene_dir / 'runs' / 'reports' / 'profile.json').read_text())
        assert data['factorized_pairs'] == 8 ** 2 + 9 ** 2

    def test_profile_without_data_uses_published_shapes(self, tmp_path):
        path = tmp_path / 'ip.json'
        path.write_text(json.dumps({'dataset': {**DATASET, 'cube': str(tmp_path / 'absent.json')}}))
        result = invoke('profile', '--config', path, '--out', tmp_path / 'out')
        assert result.exit_code == 0, result.output
        data = json.loads((tmp_path / 'out' / 'reports' / 'profile.json').read_text())
        assert (data['joint_pairs'], data['factorized_pairs']) == (62001, 42401)
        assert data['spectral_params_pretrain'] == 32965

    def test_ablate_patch_grid(self, scene_dir):
        result = invoke('ablate', '--config', scene_dir / 'config.json', '--grid', 'patch',
                        '--values', 3, '--values', 5, '--pretrain-epochs', 1, '--finetune-epochs', 1)
        assert result.exit_code == 0, result.output
        lines = (scene_dir / 'runs' / 'reports' / 'ablate_patch.csv').read_text().splitlines()
        assert lines[0] == 'setting,OA,AA,kappa'
        assert [line.split(',')[0] for line in lines[1:]] == ['3', '5']

    def test_synthesize(self, tmp_path):
        result = invoke('synthesize', '--out', tmp_path, '--size', 10, '--bands', 6, '--classes', 2,
                        '--train-per-class', 3, '--patch', 3)
        assert result.exit_code == 0, result.output
        config = RunConfig.load(tmp_path / 'config.json')
        assert config.dataset == 'synthetic' and config.patch_size == 3
        assert all(path.exists() for path in config.input_paths().values())


class TestGrids:
    def test_ratio_grid_crosses_both_encoders(self):
        cells = grid_settings('ratio', GRIDS['ratio'])
        assert len(cells) == 16
        assert cells[1] == ('0.5/0.6', {'pretrain.ratio_by_mode': {'spectral': 0.5, 'spatial': 0.6}})

    def test_other_grids(self):
        assert [label for label, _ in grid_settings('patch', GRIDS['patch'])] == ['3', '5', '7', '9']
        assert grid_settings('group', (3.0,)) == [('3', {'band_group': 3})]
        assert len(grid_settings('data-fraction', GRIDS['data-fraction'])) == 5
