"""Run configuration.

A RunConfig is assembled from the defaults, a preset, an INI file and
command-line overrides (later ones win), and validated once at the end.
"""

import configparser
import copy
import hashlib
import json
import logging
import typing

from pydantic import BaseModel, ConfigDict, Field, model_validator

from .data import SplitSpec
from .errors import ConfigError
from .pseudoreplay import InversionConfig
from .selflabel import SinkhornConfig
from .trainer import PhaseConfig

logger = logging.getLogger(__name__)

TAU_GRID = [0.8, 0.85, 0.9, 0.95, 0.99, 0.999]
# INI spelling of None for optional settings
AUTO = 'auto'


class RunSection(BaseModel):
    model_config = ConfigDict(extra='forbid')

    seed: int = 0
    out: str = 'out'


class DataSection(BaseModel):
    model_config = ConfigDict(extra='forbid')

    # 'synthetic' or 'csv' (a directory written by `ncdwf generate`)
    source: str = 'synthetic'
    csv_dir: str = ''
    per_class: int = Field(250, ge=2)
    dim: int = Field(64, ge=1)
    center_scale: float = Field(3.0, gt=0)
    noise_sigma: float = Field(1.0, gt=0)
    # minimum center distance in units of noise_sigma
    separation: float = Field(8.0, ge=0)
    test_fraction: float = Field(0.2, gt=0, lt=1)

    @model_validator(mode='after')
    def _check_source(self):
        if self.source not in ('synthetic', 'csv'):
            raise ValueError('data source must be synthetic or csv, got %r'
                             % self.source)
        if self.source == 'csv' and not self.csv_dir:
            raise ValueError('data source csv needs csv_dir')
        return self


class ModelSection(BaseModel):
    model_config = ConfigDict(extra='forbid')

    latent_dim: int = Field(32, ge=1)
    # None (auto in INI files): two layers of width latent_dim
    extractor_hidden: typing.Optional[typing.List[int]] = None
    head_hidden: typing.List[int] = []
    vhead_hidden: typing.List[int] = [64]
    kci_hidden: typing.List[int] = [128, 128]


class EvalSection(BaseModel):
    model_config = ConfigDict(extra='forbid')

    tau: float = Field(0.99, gt=0, lt=1)
    taus: typing.List[float] = TAU_GRID

    @model_validator(mode='after')
    def _check_taus(self):
        bad = [t for t in self.taus if not 0 < t < 1]
        if bad or not self.taus:
            raise ValueError('taus must be a non-empty list in (0, 1), got %s'
                             % self.taus)
        return self


def _phase2_defaults():
    return PhaseConfig(seed=1)


class RunConfig(BaseModel):
    model_config = ConfigDict(extra='forbid')

    run: RunSection = RunSection()
    data: DataSection = DataSection()
    split: SplitSpec = SplitSpec()
    model: ModelSection = ModelSection()
    phase1: PhaseConfig = PhaseConfig()
    phase2: PhaseConfig = Field(default_factory=_phase2_defaults)
    inversion: InversionConfig = InversionConfig()
    sinkhorn: SinkhornConfig = SinkhornConfig()
    eval: EvalSection = EvalSection()

    def canonical_json(self):
        return json.dumps(self.model_dump(mode='json'), sort_keys=True,
                          separators=(',', ':'))

    def config_hash(self):
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    def with_seed(self, seed):
        """Copy with the run seed set; phase seeds follow it."""
        d = self.model_dump()
        d['run']['seed'] = seed
        d['phase1']['seed'] = seed
        d['phase2']['seed'] = seed + 1
        return RunConfig.model_validate(d)

    def to_ini(self):
        parser = configparser.ConfigParser()
        for section, values in self.model_dump(mode='json').items():
            parser[section] = {k: _format_value(v) for k, v in values.items()}
        return parser


PRESETS = {
    'synth-10-5-5': {},
    'synth-100-20-80-style': {
        'split': {'total_classes': 100, 'labeled': 20, 'unlabeled': 80},
        'data': {'per_class': 50, 'center_scale': 4.0},
        'phase1': {'epochs': 30},
        'phase2': {'epochs': 30},
        'inversion': {'per_class': 10},
    },
    'paper-scale': {
        'phase1': {'batch_size': 512, 'epochs': 200},
        'phase2': {'batch_size': 512, 'epochs': 200,
                   'pseudo_fraction': 0.0025},
    },
    'paper-scale-quarter': {
        'phase1': {'batch_size': 512, 'epochs': 200},
        'phase2': {'batch_size': 512, 'epochs': 200,
                   'pseudo_fraction': 0.25},
    },
}

DEFAULT_PRESET = 'synth-10-5-5'


def _format_value(v):
    if v is None:
        return AUTO
    if isinstance(v, list):
        return ','.join(str(x) for x in v)
    return str(v)


def _list_annotation(annotation):
    if typing.get_origin(annotation) is typing.Union:
        args = [a for a in typing.get_args(annotation) if a is not type(None)]
        if len(args) == 1:
            annotation = args[0]
    return annotation


def _is_list_field(model_cls, key):
    field = model_cls.model_fields.get(key)
    return (field is not None and
            typing.get_origin(_list_annotation(field.annotation))
            in (list, typing.List))


def _is_optional_field(model_cls, key):
    field = model_cls.model_fields.get(key)
    return (field is not None and
            type(None) in typing.get_args(field.annotation))


def _merge(base, overrides):
    for section, values in overrides.items():
        if section not in base:
            raise ConfigError('unknown config section [%s]' % section)
        for key, value in values.items():
            if key not in base[section]:
                raise ConfigError('unknown key %r in [%s]' % (key, section))
            base[section][key] = value
    return base


def read_config_file(path):
    """INI file -> {section: {key: value}}; list values are comma
    separated."""
    parser = configparser.ConfigParser()
    try:
        with open(path, encoding='utf-8') as f:
            parser.read_file(f)
    except configparser.Error as e:
        raise ConfigError('%s: %s' % (path, e))
    sections = RunConfig.model_fields
    result = {}
    for name in parser.sections():
        if name not in sections:
            raise ConfigError('%s: unknown section [%s]' % (path, name))
        model_cls = sections[name].annotation
        values = {}
        for key, raw in parser[name].items():
            if key not in model_cls.model_fields:
                raise ConfigError('%s: unknown key %r in [%s]'
                                  % (path, key, name))
            if (raw.strip() == AUTO and
                    _is_optional_field(model_cls, key)):
                values[key] = None
            elif _is_list_field(model_cls, key):
                values[key] = [x.strip() for x in raw.split(',') if x.strip()]
            else:
                values[key] = raw
        result[name] = values
    return result


def build_config(preset=None, path=None, overrides=None):
    """defaults < preset < config file < overrides; the result is
    validated (pydantic.ValidationError on bad values)."""
    preset = preset or DEFAULT_PRESET
    if preset not in PRESETS:
        raise ConfigError('unknown preset %r (known: %s)'
                          % (preset, ', '.join(sorted(PRESETS))))
    d = RunConfig().model_dump()
    _merge(d, copy.deepcopy(PRESETS[preset]))
    if path:
        _merge(d, read_config_file(path))
    if overrides:
        _merge(d, overrides)
    config = RunConfig.model_validate(d)
    logger.debug('config %s (preset %s, file %s)', config.config_hash()[:12],
                 preset, path)
    return config
