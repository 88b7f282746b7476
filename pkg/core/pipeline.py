"""
Steps shared by the pretrain, finetune and ablate commands, expressed on a
RunConfig and a loaded Scene.
"""

import logging

from classifier.models import build_classifier, load_pretrained
from classifier.tasks import finetune
from core.config import RunConfig
from evaluation.reports import evaluate, write_report
from hsi.scene import Scene
from pretrain.tasks import pretrain
from transformer.config import EncoderConfig

logger = logging.getLogger(__name__)

# branch a --from-pretrained / --joint-ckpt path feeds, per architecture
PRETRAINED_BRANCHES = {
    'factoformer': ('spectral', 'spatial'),
    'spectral': ('spectral',),
    'spatial': ('spatial',),
    'joint': ('joint',),
}


def encoder_config(config: RunConfig, scene: Scene, mode) -> EncoderConfig:
    return EncoderConfig.for_mode(mode, config.patch_size, scene.bands, config.group_for(mode), config.widths[mode])


def pretrain_encoder(config: RunConfig, scene: Scene, mode, out_dir, tag=None):
    return pretrain(
        scene.pretrain_set(config.patch_size),
        mode,
        encoder_config(config, scene, mode),
        config.pretrain_config(mode),
        seed=config.seed,
        group=config.group_for(mode),
        out_dir=out_dir,
        threads=config.threads,
        tag=tag,
    )


def build_model(config: RunConfig, scene: Scene, arch):
    return build_classifier(
        arch,
        config.patch_size,
        scene.bands,
        scene.num_classes,
        group=config.band_group,
        joint_group=config.joint_group,
        widths=config.widths,
        fusion_hidden=config.fusion_hidden,
        seed=config.seed,
        threads=config.threads,
    )


def finetune_and_evaluate(config: RunConfig, scene: Scene, arch, out_dir, pretrained=None, tag=None,
                          finetune_config=None):
    """
    Build, optionally load pre-trained encoders (``{branch: checkpoint}``),
    fine-tune, evaluate on the test split and write the report.
    Returns (FinetuneResult, EvaluationReport).
    """
    tag = tag or f"finetune_{arch}"
    model = build_model(config, scene, arch)
    if pretrained:
        load_pretrained(model, pretrained)
    result = finetune(
        model,
        scene.train_set(config.patch_size),
        finetune_config or config.finetune_config(),
        seed=config.seed,
        out_dir=out_dir,
        threads=config.threads,
        dataset=config.dataset,
        tag=tag,
    )
    report = evaluate(model, scene.test_set(config.patch_size), scene.num_classes, scene.labels.class_names)
    init = 'pretrained' if pretrained else 'scratch'
    write_report(report, out_dir, tag, seed=config.seed, config_hash=config.hash,
                 title=f"{config.dataset} / {arch} ({init})")
    logger.info(
        "%s: OA %.2f AA %.2f kappa %.4f", tag,
        100 * report.scores.overall_accuracy, 100 * report.scores.average_accuracy, report.scores.kappa,
    )
    return result, report
