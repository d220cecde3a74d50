"""Study configuration: flat key = value files overridden by command line flags."""
import hashlib
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field, fields

import fs.errors

from .analysis import STABILITY_SHAPES, TABLE_STAB_H, TABLE_STAB_KIND
from .assemble import Layered, Uniform, UniformLayers
from .errors import ConfigError, InvalidParameter
from .fs_utils import read_text
from .inverse_lab import INVERSE_TESTS, MAX_DEGREE
from .mesh import resolve_family
from .vem_local import STAB_H_CHOICES, StabilizationKind

logger = logging.getLogger(__name__)

COMMANDS = ("mesh", "solve", "convergence", "compare-fem", "stability-table", "inverse-lab")

SQRT2_M1 = math.sqrt(2.0) - 1.0
SIGMA_TOKENS = {
    "1/2": 0.5,
    "sqrt2-1": SQRT2_M1,
    "(sqrt2-1)^2": SQRT2_M1 ** 2,
}

DEFAULT_OUTPUTS = {
    "mesh": "mesh.xml",
    "solve": "solution.json",
    "convergence": "convergence.csv",
    "compare-fem": "compare_fem.csv",
    "stability-table": "stability.csv",
    "inverse-lab": "inverse_lab.csv",
}

# keys that do not change any result and stay out of the config hash
_UNHASHED = ("jobs", "out", "timings")


def default_jobs():
    value = os.environ.get("HP_VEM_JOBS")
    if value:
        try:
            return max(1, int(value))
        except ValueError:
            raise ConfigError(f"HP_VEM_JOBS must be an integer, got '{value}'")
    return os.cpu_count() or 1


def parse_sigma(token):
    """Grading parameter from a symbolic token or a float literal, 0 < sigma < 1."""
    token = str(token).strip()
    if token in SIGMA_TOKENS:
        return SIGMA_TOKENS[token]
    try:
        sigma = float(token)
    except ValueError:
        raise ConfigError(f"invalid sigma '{token}', expected a number in (0, 1) or one of "
                          f"{', '.join(SIGMA_TOKENS)}")
    if not 0.0 < sigma < 1.0:
        raise ConfigError(f"sigma must lie in (0, 1), got {sigma}")
    return sigma


def parse_degree_rule(token):
    """
    Degree rule from `uniform:K`, `layered:MU` or `uniform:n+1`.

    Raises:
        ConfigError: for unknown tokens, K < 2 or MU <= 0
    """
    token = str(token).strip().lower()
    kind, _, value = token.partition(":")
    if kind == "uniform" and value == "n+1":
        return UniformLayers()
    try:
        if kind == "uniform":
            k = int(value)
            if k < 2:
                raise ConfigError(f"uniform degree must be >= 2, got {k}")
            return Uniform(k)
        if kind == "layered":
            mu = float(value)
            if not mu > 0:
                raise ConfigError(f"layered slope must be positive, got {mu}")
            return Layered(mu)
    except ValueError:
        pass
    raise ConfigError(f"invalid degree rule '{token}', expected uniform:K, layered:MU or uniform:n+1")


def _parse_family(token):
    try:
        return resolve_family(str(token).strip())
    except InvalidParameter as e:
        raise ConfigError(str(e))


def _parse_families(token):
    if isinstance(token, (list, tuple)):
        return [_parse_family(t) for t in token]
    return [_parse_family(t) for t in str(token).split(",") if t.strip()]


def _parse_stab_kind(token):
    try:
        return StabilizationKind.parse(str(token).strip()).value
    except ValueError:
        raise ConfigError(f"invalid stabilization '{token}', expected one of "
                          f"{', '.join(k.value for k in StabilizationKind)} or boundary, gll, dofi")


def _parse_stab_h(token):
    value = str(token).strip().lower()
    if value not in STAB_H_CHOICES:
        raise ConfigError(f"invalid stabilization length '{token}', expected one of {', '.join(STAB_H_CHOICES)}")
    return value


def _parse_bool(token):
    if isinstance(token, bool):
        return token
    value = str(token).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"invalid boolean '{token}'")


def _parse_optional_int(token):
    if token is None or str(token).strip().lower() in ("", "auto", "none"):
        return None
    return int(token)


@dataclass
class StudyConfig:
    command: str
    family: str = "GradedSquares"
    families: list = field(default_factory=lambda: ["GradedSquares", "LayerDecagons", "DecagonsCut"])
    sigma: float = 0.5
    n: int = 2
    n_min: int = 1
    n_max: int = 8
    degrees: str = "layered:1"
    # None: GLL with h = longest edge for stability-table, L2 boundary with h = diameter otherwise
    stab_kind: str = None
    stab_h: str = None
    oracle_level: int = None
    strict: bool = False
    shape: str = "square"
    p_min: int = 2
    p_max: int = 10
    test: str = "weighted"
    alpha: float = 0.0
    beta: float = 1.0
    samples: int = None
    seed: int = 0
    out: str = None
    jobs: int = 1
    timings: bool = False

    @property
    def degree_rule(self):
        return parse_degree_rule(self.degrees)

    @property
    def stabilization(self):
        return StabilizationKind(self.stab_kind)

    @property
    def p_values(self):
        return list(range(self.p_min, self.p_max + 1))

    def hashed_dict(self):
        return {k: v for k, v in asdict(self).items() if k not in _UNHASHED}


_PARSERS = {
    "family": _parse_family,
    "families": _parse_families,
    "sigma": parse_sigma,
    "n": int,
    "n_min": int,
    "n_max": int,
    "degrees": lambda t: str(parse_degree_rule(t)),
    "stab_kind": _parse_stab_kind,
    "stab_h": _parse_stab_h,
    "oracle_level": _parse_optional_int,
    "strict": _parse_bool,
    "shape": str,
    "p_min": int,
    "p_max": int,
    "test": str,
    "alpha": float,
    "beta": float,
    "samples": _parse_optional_int,
    "seed": int,
    "out": str,
    "jobs": int,
    "timings": _parse_bool,
}


def read_config_file(path_or_url):
    """
    Read a flat `key = value` config file. Blank lines and lines starting
    with # are ignored; dashes in keys become underscores.
    """
    try:
        text = read_text(path_or_url)
    except (fs.errors.FSError, OSError) as e:
        raise ConfigError(f"cannot read config file {path_or_url}: {e}") from e
    values = {}
    for number, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        key, sep, value = s.partition("=")
        if not sep:
            raise ConfigError(f"{path_or_url}:{number}: expected 'key = value', got '{s}'")
        key = key.strip().replace("-", "_")
        if key not in _PARSERS:
            raise ConfigError(f"{path_or_url}:{number}: unknown key '{key}'")
        values[key] = value.strip()
    logger.debug("read %d config values from %s", len(values), path_or_url)
    return values


def _validate(config):
    if config.command not in COMMANDS:
        raise ConfigError(f"unknown command '{config.command}', expected one of {', '.join(COMMANDS)}")
    if config.n < 0:
        raise ConfigError(f"n must be >= 0, got {config.n}")
    if not 0 <= config.n_min <= config.n_max:
        raise ConfigError(f"need 0 <= nmin <= nmax, got nmin={config.n_min}, nmax={config.n_max}")
    if config.oracle_level is not None and not 1 <= config.oracle_level <= 8:
        raise ConfigError(f"oracle level must lie in 1..8, got {config.oracle_level}")
    if config.shape not in STABILITY_SHAPES:
        raise ConfigError(f"invalid shape '{config.shape}', expected one of {', '.join(STABILITY_SHAPES)}")
    if config.test not in INVERSE_TESTS:
        raise ConfigError(f"invalid inverse test '{config.test}', expected one of {', '.join(INVERSE_TESTS)}")
    if config.p_min > config.p_max:
        raise ConfigError(f"need pmin <= pmax, got pmin={config.p_min}, pmax={config.p_max}")
    if config.command == "stability-table" and config.p_min < 1:
        raise ConfigError(f"stability degrees must be >= 1, got pmin={config.p_min}")
    if config.command == "inverse-lab" and not 0 <= config.p_min <= config.p_max <= MAX_DEGREE[config.test]:
        raise ConfigError(f"{config.test} lab degrees must lie in 0..{MAX_DEGREE[config.test]}")
    if config.samples is not None and config.samples < 1:
        raise ConfigError(f"samples must be >= 1, got {config.samples}")
    if config.jobs < 1:
        raise ConfigError(f"jobs must be >= 1, got {config.jobs}")
    if not 0 <= config.alpha <= config.beta <= 3:
        raise ConfigError(f"need 0 <= alpha <= beta <= 3, got alpha={config.alpha}, beta={config.beta}")


def build_config(command, file_values=None, overrides=None):
    """
    Validated StudyConfig from config file values and flag overrides.

    Flags win over the file; None-valued flags are ignored.

    Raises:
        ConfigError: for any value outside its valid range
    """
    merged = {"jobs": default_jobs()}
    merged.update(file_values or {})
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    known = {f.name for f in fields(StudyConfig)}
    values = {}
    for key, raw in merged.items():
        if key not in known or key == "command":
            continue
        try:
            values[key] = _PARSERS[key](raw)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"invalid value for {key}: '{raw}' ({e})")
    config = StudyConfig(command=command, **values)
    if config.out is None:
        config.out = DEFAULT_OUTPUTS.get(command)
    table = command == "stability-table"
    if config.stab_kind is None:
        config.stab_kind = (TABLE_STAB_KIND if table else StabilizationKind.BOUNDARY_PLUS_MOMENTS).value
    if config.stab_h is None:
        config.stab_h = TABLE_STAB_H if table else "diameter"
    _validate(config)
    return config


def config_hash(config):
    """First 16 hex digits of the sha256 of the canonical JSON of the config."""
    canonical = json.dumps(config.hashed_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]
