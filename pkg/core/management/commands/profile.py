import json
import time

import click

from core.exceptions import ConfigError
from core.management.base import RunCommand
from core.pipeline import encoder_config
from hsi.registry import DATASETS
from hsi.scene import load_scene
from pretrain.tasks import pretrain
from transformer.accounting import cost_report
from transformer.config import EncoderConfig


class Command(RunCommand):
    help = 'Report analytic parameter counts and per-sample cost (optionally measured epoch times)'

    load_scene = False

    def add_arguments(self):
        return super().add_arguments() + [
            click.Option(['--measure-epochs', 'measure_epochs'], type=click.IntRange(min=0), default=0,
                         help='Time this many pre-training epochs per encoder (reported, not asserted).'),
            click.Option(['--attention-products', 'attention_products'], is_flag=True,
                         help='Also count the QK^T and AV products.'),
        ]

    def scene_shape(self, config, inputs):
        """(bands, classes, scene or None); falls back to the published scene facts when data is absent."""
        if inputs['cube'].exists() and inputs['labels'].exists():
            scene = load_scene(config.dataset, inputs['cube'], inputs['labels'], inputs.get('split'))
            return scene.bands, scene.num_classes, scene
        info = DATASETS.get(config.dataset)
        if info is None:
            raise ConfigError(f"no data found for {config.dataset!r} and it is not a known scene")
        return info.shape[2], info.num_classes, None

    def handle(self, **options):
        context = self.prepare('profile', options)
        config = context.config
        bands, classes, scene = self.scene_shape(config, config.input_paths())
        patch_size = config.patch_size

        def mode_config(mode):
            return EncoderConfig.for_mode(mode, patch_size, bands, config.group_for(mode), config.widths[mode])

        spectral, spatial, joint = mode_config('spectral'), mode_config('spatial'), mode_config('joint')
        report = cost_report(spectral, spatial, joint, classes, config.fusion_hidden,
                             attention_products=options['attention_products'])
        data = report.to_dict()

        self.stdout.write(self.style.HEADING(f'{config.dataset}: S={patch_size}, B={bands}, C={classes}'))
        self.stdout.write(f'  Tokens: spectral m={report.spectral_tokens}, spatial n={report.spatial_tokens}')
        self.stdout.write(f'  Attention pairs: joint (m+n)^2={report.joint_pairs}, '
                          f'factorized m^2+n^2={report.factorized_pairs}')
        self.stdout.write(f'  Factorized model: {report.factorized_mflops:.2f} MFLOPs per sample')
        self.stdout.write(f'  Joint baseline (k={config.joint_group}, {joint.num_tokens} tokens): '
                          f'{report.joint_baseline_mflops:.2f} MFLOPs per sample '
                          f'({report.cost_ratio:.2f}x)')
        self.stdout.write(f'  Parameters with decoder: spectral {report.spectral_params_pretrain:,}, '
                          f'spatial {report.spatial_params_pretrain:,}')
        self.stdout.write(f'  Encoder parameters: spectral {report.spectral_params:,}, '
                          f'spatial {report.spatial_params:,}, joint {report.joint_params:,}')
        self.stdout.write(f'  Classifier parameters: factoformer {report.factoformer_params:,}')

        if options['measure_epochs']:
            if scene is None:
                raise ConfigError('--measure-epochs needs the scene data on disk')
            data['seconds_per_epoch'] = {}
            for mode in ('spectral', 'spatial'):
                pretrain_config = config.pretrain_config(mode)
                pretrain_config.epochs = options['measure_epochs']
                started = time.perf_counter()
                pretrain(scene.pretrain_set(patch_size), mode, encoder_config(config, scene, mode), pretrain_config,
                         seed=config.seed, group=config.group_for(mode), threads=config.threads)
                seconds = (time.perf_counter() - started) / options['measure_epochs']
                data['seconds_per_epoch'][mode] = seconds
                self.stdout.write(f'  Measured {mode} pre-training: {seconds:.2f} s/epoch')

        path = context.out_dir / 'reports' / 'profile.json'
        path.write_text(json.dumps(data, indent=2))
        self.stdout.write(self.style.SUCCESS(f'Cost report written to {path}'))
