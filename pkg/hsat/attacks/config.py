from dataclasses import asdict, dataclass
from enum import Enum
from fractions import Fraction
from typing import Optional, Union

from hsat.exceptions import ConfigurationError


class AttackConfigError(ConfigurationError):
    pass


class Objective(Enum):
    HIER_CONTRASTIVE = 'hier_contrastive'
    NEG_FEATURE_COSINE = 'neg_feature_cosine'


class UpdateRule(Enum):
    PGD = 'pgd'
    BIM = 'bim'
    MIFGSM = 'mifgsm'


def parse_fraction(value: Union[str, float, int], key: str = 'value') -> float:
    """Accepts plain numbers and "a/b" strings such as "8/255"."""
    if isinstance(value, bool):
        raise AttackConfigError(f'{key}: expected a number or fraction, got {value!r}')
    if isinstance(value, (int, float)):
        return float(value)
    try:
        return float(Fraction(str(value).strip()))
    except (ValueError, ZeroDivisionError):
        raise AttackConfigError(f'{key}: cannot parse {value!r} as a number or "a/b" fraction')


def format_budget(eps: float) -> str:
    fraction = Fraction(eps).limit_denominator(255)
    if abs(float(fraction) - eps) < 1e-12 and fraction.denominator == 255:
        return f'{fraction.numerator}/255'
    return f'{eps:g}'


@dataclass(frozen=True)
class AttackConfig:
    objective: Objective = Objective.HIER_CONTRASTIVE
    rule: UpdateRule = UpdateRule.PGD
    eps: float = 8 / 255
    steps: int = 5
    alpha: Optional[float] = None
    momentum: float = 1.0
    random_start: bool = True
    contrast_clean_negatives: bool = False

    def __post_init__(self):
        try:
            object.__setattr__(self, 'objective', Objective(self.objective))
        except ValueError:
            raise AttackConfigError(f'attack.objective: unknown objective "{self.objective}"')
        try:
            object.__setattr__(self, 'rule', UpdateRule(self.rule))
        except ValueError:
            raise AttackConfigError(f'attack.rule: unknown update rule "{self.rule}"')
        object.__setattr__(self, 'eps', parse_fraction(self.eps, 'attack.eps'))
        if self.alpha is not None:
            object.__setattr__(self, 'alpha', parse_fraction(self.alpha, 'attack.alpha'))

    def validate(self) -> 'AttackConfig':
        if not 0.0 <= self.eps <= 1.0:
            raise AttackConfigError(f'attack.eps: must lie in [0, 1], got {self.eps}')
        if not isinstance(self.steps, int) or isinstance(self.steps, bool) or self.steps < 0:
            raise AttackConfigError(f'attack.steps: must be an integer >= 0, got {self.steps!r}')
        if self.steps > 0 and self.alpha is not None and not self.alpha > 0:
            raise AttackConfigError(f'attack.alpha: must be > 0 when attack.steps > 0, got {self.alpha}')
        if self.momentum < 0:
            raise AttackConfigError(f'attack.momentum: must be >= 0, got {self.momentum}')
        return self

    @property
    def step_size(self) -> float:
        """Explicit alpha, or 2.5 * eps / steps."""
        if self.alpha is not None:
            return self.alpha
        return 2.5 * self.eps / self.steps if self.steps > 0 else 0.0

    @property
    def name(self) -> str:
        return f'{self.rule.value}-{self.steps} eps={format_budget(self.eps)}'

    def replace(self, **changes) -> 'AttackConfig':
        values = self.to_json()
        values.update(changes)
        return AttackConfig.from_json(values)

    def to_json(self) -> dict:
        values = asdict(self)
        values['objective'] = self.objective.value
        values['rule'] = self.rule.value
        return values

    @staticmethod
    def from_json(property_values: dict) -> 'AttackConfig':
        try:
            return AttackConfig(**property_values).validate()
        except TypeError as e:
            raise AttackConfigError(f'attack: {e}')
