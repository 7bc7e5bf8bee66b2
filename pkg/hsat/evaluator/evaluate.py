import dataclasses
from dataclasses import asdict, dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from logzero import logger

from hsat.attacks.attacks import craft_adversarial
from hsat.attacks.config import AttackConfig, AttackConfigError, Objective, parse_fraction
from hsat.contrastive.positives import LEVEL_ORDER, Level
from hsat.evaluator.knn import EmbeddingBank, KnnConfigError, aggregate, knn_predict, normalize_rows
from hsat.evaluator.metrics import metrics
from hsat.exceptions import ConfigurationError
from hsat.hierdata.dataset import HierDataset, PatchTable
from hsat.hierdata.manifest import HierarchyManifest, Split
from hsat.model.encoder import Encoder, ModelParams
from hsat.tensor_engine.tensor import no_grad


class ModelMismatchError(ConfigurationError):
    pass


@dataclass(frozen=True)
class EvalConfig:
    k: int = 10
    batch_size: int = 256
    attack_batch_size: int = 64
    seed: int = 0
    steps: int = 10
    rules: Tuple[str, ...] = ('pgd', 'bim', 'mifgsm')
    eps: Tuple[float, ...] = (4 / 255, 8 / 255)

    def __post_init__(self):
        object.__setattr__(self, 'rules', tuple(self.rules))
        object.__setattr__(self, 'eps', tuple(parse_fraction(e, 'eval.eps') for e in self.eps))

    def validate(self) -> 'EvalConfig':
        if self.k < 1:
            raise KnnConfigError(f'eval.k: must be >= 1, got {self.k}')
        if self.batch_size < 1 or self.attack_batch_size < 1:
            raise KnnConfigError('eval.batch_size and eval.attack_batch_size must be >= 1')
        self.attacks()
        return self

    def attacks(self) -> List[AttackConfig]:
        try:
            return [AttackConfig(objective=Objective.NEG_FEATURE_COSINE, rule=rule, eps=eps,
                                 steps=self.steps).validate()
                    for rule in self.rules for eps in self.eps]
        except AttackConfigError as e:
            raise KnnConfigError(f'eval: {e}')

    def to_json(self) -> dict:
        values = asdict(self)
        values['rules'] = list(self.rules)
        values['eps'] = list(self.eps)
        return values

    @staticmethod
    def from_json(property_values: dict) -> 'EvalConfig':
        try:
            return EvalConfig(**property_values).validate()
        except TypeError as e:
            raise KnnConfigError(f'eval: {e}')


@dataclass(frozen=True)
class LevelMetrics:
    acc: float
    mca: float


@dataclass(frozen=True)
class EvalReport:
    model: str
    condition: str
    levels: Dict[Level, LevelMetrics]
    drops: Optional[Dict[Level, LevelMetrics]] = None
    surrogate: Optional[str] = None


def embed(params: ModelParams, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """L2-normalized backbone features, computed in chunks without recording a tape."""
    encoder = Encoder(params)
    chunks = []
    with no_grad():
        for start in range(0, len(images), batch_size):
            chunks.append(encoder.embed_backbone(images[start:start + batch_size]).numpy())
    return normalize_rows(np.concatenate(chunks))


def build_bank(params: ModelParams, dataset: HierDataset, batch_size: int = 256,
               source: Optional[str] = None) -> EmbeddingBank:
    train = dataset.patch_table(Split.TRAIN)
    return EmbeddingBank(embed(params, train.images, batch_size), train.labels, classes=dataset.manifest.classes,
                         slide_ids=train.slide_ids, patient_ids=train.patient_ids, source=source)


def classify(bank: EmbeddingBank, features: np.ndarray, table: PatchTable, k: int,
             manifest: HierarchyManifest) -> Dict[Level, LevelMetrics]:
    manifest.check_disjoint_splits()
    result = knn_predict(bank, features, k)
    label_of = {}
    for slide_id, patient_id, label in zip(table.slide_ids, table.patient_ids, table.labels):
        label_of[slide_id] = int(label)
        label_of[patient_id] = int(label)

    levels = {Level.PATCH: LevelMetrics(*metrics(result.predictions, table.labels))}
    for level, ids, known in ((Level.SLIDE, table.slide_ids, manifest.has_slide),
                              (Level.PATIENT, table.patient_ids, manifest.has_patient)):
        predicted = aggregate(result.votes, ids, is_known=known)
        groups = sorted(predicted)
        levels[level] = LevelMetrics(*metrics([predicted[g] for g in groups], [label_of[g] for g in groups]))
    return levels


def drops(clean: Mapping[Level, LevelMetrics], adversarial: Mapping[Level, LevelMetrics]) -> Dict[Level, LevelMetrics]:
    return {level: LevelMetrics(clean[level].acc - adversarial[level].acc, clean[level].mca - adversarial[level].mca)
            for level in LEVEL_ORDER}


class _Target:
    """Frozen model ready for queries: bank, val table and clean predictions."""

    def __init__(self, name: str, params: ModelParams, dataset: HierDataset, cfg: EvalConfig):
        self.name = name
        self.params = params
        self.dataset = dataset
        self.cfg = cfg
        self.bank = build_bank(params, dataset, cfg.batch_size, source=name)
        self.val = dataset.patch_table(Split.VAL)
        self.clean = EvalReport(name, 'clean', self.score(self.val.images))

    def score(self, images: np.ndarray) -> Dict[Level, LevelMetrics]:
        return classify(self.bank, embed(self.params, images, self.cfg.batch_size), self.val, self.cfg.k,
                        self.dataset.manifest)

    def attacked(self, condition: str, images: np.ndarray, surrogate: Optional[str] = None) -> EvalReport:
        levels = self.score(images)
        return EvalReport(self.name, condition, levels, drops(self.clean.levels, levels), surrogate)


def evaluate(params: ModelParams, dataset: HierDataset, attack: Optional[AttackConfig] = None, k: int = 10, *,
             cfg: Optional[EvalConfig] = None, model: str = 'model') -> List[EvalReport]:
    """Clean kNN report, followed by a white-box report when an attack is given."""
    cfg = dataclasses.replace(cfg, k=k) if cfg is not None else EvalConfig(k=k)
    return sweep(params, dataset, [attack] if attack is not None else [], cfg=cfg, model=model)


def sweep(params: ModelParams, dataset: HierDataset, attacks: Sequence[AttackConfig], *,
          cfg: Optional[EvalConfig] = None, model: str = 'model') -> List[EvalReport]:
    """White-box robustness across several update rules and budgets, one clean pass shared by all."""
    cfg = (cfg or EvalConfig()).validate()
    target = _Target(model, params, dataset, cfg)
    reports = [target.clean]
    for attack in attacks:
        x_adv = craft_adversarial(params, target.val.images, attack, cfg.seed, cfg.attack_batch_size)
        reports.append(target.attacked(attack.name, x_adv))
        patch = reports[-1].levels[Level.PATCH]
        logger.info(f'{model} under {attack.name}: patch Acc {patch.acc:.2f} MCA {patch.mca:.2f}')
    return reports


def _check_shapes(models: Mapping[str, ModelParams]):
    shapes = {name: params.config.input_shape for name, params in models.items()}
    if len(set(shapes.values())) > 1:
        raise ModelMismatchError(f'transfer: models disagree on input shape {shapes}')


def transfer_matrix(surrogates: Mapping[str, ModelParams], targets: Mapping[str, ModelParams],
                    dataset: HierDataset, attack: AttackConfig, *,
                    cfg: Optional[EvalConfig] = None) -> List[EvalReport]:
    """Craft once per surrogate, evaluate on every target.

    Every target also gets an ``average`` row: its mean drop over the surrogates other than itself.
    """
    cfg = (cfg or EvalConfig()).validate()
    _check_shapes({**surrogates, **targets})
    ready = {name: _Target(name, params, dataset, cfg) for name, params in targets.items()}
    val_images = dataset.patch_table(Split.VAL).images
    reports = [target.clean for target in ready.values()]
    by_target: Dict[str, List[EvalReport]] = {name: [] for name in ready}
    for surrogate_name, surrogate in surrogates.items():
        x_adv = craft_adversarial(surrogate, val_images, attack, cfg.seed, cfg.attack_batch_size)
        for name, target in ready.items():
            report = target.attacked(attack.name, x_adv, surrogate=surrogate_name)
            reports.append(report)
            by_target[name].append(report)
            logger.info(f'{surrogate_name} -> {name}: patch Acc-D {report.drops[Level.PATCH].acc:.2f}')

    for name, rows in by_target.items():
        others = [r for r in rows if r.surrogate != name]
        if not others:
            continue
        mean_drops = {level: LevelMetrics(float(np.mean([r.drops[level].acc for r in others])),
                                          float(np.mean([r.drops[level].mca for r in others])))
                      for level in LEVEL_ORDER}
        mean_levels = {level: LevelMetrics(float(np.mean([r.levels[level].acc for r in others])),
                                           float(np.mean([r.levels[level].mca for r in others])))
                       for level in LEVEL_ORDER}
        reports.append(EvalReport(name, 'average', mean_levels, mean_drops, surrogate='others'))
    return reports


def transfer_eval(surrogate: ModelParams, targets: Mapping[str, ModelParams], dataset: HierDataset,
                  attack: AttackConfig, *, surrogate_name: str = 'surrogate',
                  cfg: Optional[EvalConfig] = None) -> List[EvalReport]:
    return transfer_matrix({surrogate_name: surrogate}, targets, dataset, attack, cfg=cfg)
