"""Scenario configuration files.

INI-style sections of ``key = value`` lines; ``#`` starts a comment. Every
value is validated on load and errors name the file line and the dotted key,
e.g. ``scenario.ini:3: model.noise_power: must be > 0``.
"""

from __future__ import annotations

import configparser
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

from .detectors import ConstraintPair, Method, Scheme
from .fusion import FusionKind, FusionRule
from .signal import DrawRule, Hypothesis, ScenarioTruth, SensorNetwork, SignalModel


class ConfigError(ValueError):
    def __init__(self, message, key=None, line=None, source="<config>"):
        self.key, self.line, self.source = key, line, source
        where = f"{source}:{line}: " if line else f"{source}: "
        super().__init__(where + (f"{key}: " if key else "") + message)


# section -> key -> (parser, default); default None means optional/absent
_REQUIRED = object()


def _float(s):
    return float(s)


def _int(s):
    v = float(s)
    if not v.is_integer():
        raise ValueError(f"expected an integer, got {s!r}")
    return int(v)


def _floats(s):
    return [float(x) for x in s.replace(",", " ").split()]


def _ints(s):
    return [_int(x) for x in s.replace(",", " ").split()]


def _words(s):
    return [x.strip().lower() for x in s.replace(",", " ").split()]


def _word(s):
    return s.strip().lower()


def _optional_int(s):
    return None if s.strip().lower() in ("", "none", "never") else _int(s)


def _optional_float(s):
    return None if s.strip().lower() in ("", "none") else float(s)


SCHEMA = {
    "model": {
        "noise_power": (_float, _REQUIRED),
        "authorized_power": (_float, _REQUIRED),
        "unauthorized_power_min": (_float, _REQUIRED),
        "unauthorized_power_max": (_float, _REQUIRED),
        "samples_per_block": (_int, _REQUIRED),
    },
    "network": {
        "sensor_count": (_int, 1),
        "gains": (_floats, [1.0]),
        "coverage_radius_m": (_float, 10_000.0),
    },
    "constraints": {
        "alpha": (_float, _REQUIRED),
        "beta": (_float, _REQUIRED),
    },
    "detector": {
        "scheme": (_word, "glrt"),
        "method": (_word, "analytic"),
    },
    "fusion": {
        "rule": (_word, "soft"),
        "k": (_optional_int, None),
    },
    "truth": {
        "draw_rule": (_word, "fixed"),
        "unauthorized_power": (_optional_float, None),
    },
    "experiment": {
        "trials": (_int, 100_000),
        "seed": (_int, 0),
        "schemes": (_words, ["genie", "glrt"]),
        "alpha_beta_grid": (_floats, [0.02, 0.05, 0.1, 0.2]),
        "tradeoff_samples": (_ints, [16, 64]),
        "grid_sensors": (_ints, [1, 2, 4, 8]),
        "grid_samples": (_ints, [8, 16, 32, 64]),
    },
    "quickest": {
        "thresholds": (_floats, [3.0, 5.0, 8.0]),
        "change_time": (_optional_int, 1),
        "trials": (_int, 10_000),
        "post_change_power": (_optional_float, None),
    },
}


@dataclass(frozen=True)
class QuickestConfig:
    thresholds: tuple[float, ...]
    change_time: int | None
    trials: int
    post_change_power: float | None


@dataclass(frozen=True)
class ScenarioConfig:
    model: SignalModel
    network: SensorNetwork
    constraints: ConstraintPair
    scheme: Scheme
    method: Method
    rule: FusionRule
    truth: ScenarioTruth
    trials: int
    seed: int
    schemes: tuple[str, ...]
    alpha_beta_grid: tuple[float, ...]
    tradeoff_samples: tuple[int, ...]
    grid_sensors: tuple[int, ...]
    grid_samples: tuple[int, ...]
    quickest: QuickestConfig
    source: str = field(default="<config>", compare=False)

    def manifest(self) -> dict:
        """Plain-data description of the scenario for run manifests."""
        m, n = self.model, self.network
        return {
            "model": {
                "noise_power": m.noise_power,
                "authorized_power": m.authorized_power,
                "unauthorized_power_min": m.p2_min,
                "unauthorized_power_max": m.p2_max,
                "samples_per_block": m.samples_per_block,
            },
            "network": {"gains": list(n.per_sensor_gain), "coverage_radius_m": n.coverage_radius_m},
            "constraints": {"alpha": self.constraints.alpha, "beta": self.constraints.beta},
            "scheme": self.scheme.value,
            "method": self.method.value,
            "fusion_rule": self.rule.label,
            "truth": {
                "draw_rule": self.truth.draw_rule.value,
                "unauthorized_power": self.truth.true_unauthorized_power,
            },
        }


_SECTION_RE = re.compile(r"^\s*\[([^\]]+)\]")
_KEY_RE = re.compile(r"^\s*([^=:#;\s][^=:]*?)\s*[=:]")


def _line_index(text):
    """(section, key) -> 1-based line number, plus section header lines."""
    index, section = {}, None
    for no, line in enumerate(text.splitlines(), 1):
        m = _SECTION_RE.match(line)
        if m:
            section = m.group(1).strip().lower()
            index.setdefault((section, None), no)
            continue
        m = _KEY_RE.match(line)
        if m and section is not None and not line[:1].isspace():
            index.setdefault((section, m.group(1).strip().lower()), no)
    return index


def loads(text, source="<config>") -> ScenarioConfig:
    parser = configparser.ConfigParser(
        inline_comment_prefixes=("#", ";"), comment_prefixes=("#", ";"), interpolation=None, strict=True
    )
    try:
        parser.read_string(text, source=source)
    except configparser.DuplicateOptionError as exc:
        raise ConfigError("duplicate key", f"{exc.section}.{exc.option}", exc.lineno, source) from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigError("duplicate section", exc.section, exc.lineno, source) from None
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError("key outside any [section]", None, exc.lineno, source) from None
    except configparser.ParsingError as exc:
        lineno = exc.errors[0][0] if exc.errors else None
        raise ConfigError("cannot parse line", None, lineno, source) from None

    lines = _line_index(text)

    def err(msg, section, key=None):
        return ConfigError(msg, f"{section}.{key}" if key else section, lines.get((section, key)), source)

    values = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise err("unknown section", section)
    for section, keys in SCHEMA.items():
        got = parser[section] if parser.has_section(section) else {}
        for key in got:
            if key not in keys:
                raise err("unknown key", section, key)
        for key, (conv, default) in keys.items():
            if key in got:
                try:
                    values[(section, key)] = conv(got[key])
                except ValueError as exc:
                    raise err(f"invalid value {got[key]!r} ({exc})", section, key) from None
            elif default is _REQUIRED:
                raise ConfigError("missing required key", f"{section}.{key}",
                                  lines.get((section, None)), source)
            else:
                values[(section, key)] = default

    def v(section, key):
        return values[(section, key)]

    def check(ok, msg, section, key):
        if not ok:
            raise err(f"{msg} (got {v(section, key)!r})", section, key)

    def finite(x):
        return all(math.isfinite(y) for y in (x if isinstance(x, list) else [x]))

    check(v("model", "noise_power") > 0 and finite(v("model", "noise_power")), "must be > 0", "model", "noise_power")
    check(v("model", "authorized_power") >= 0 and finite(v("model", "authorized_power")),
          "must be >= 0", "model", "authorized_power")
    check(v("model", "unauthorized_power_min") >= 0, "must be >= 0", "model", "unauthorized_power_min")
    check(v("model", "unauthorized_power_max") >= v("model", "unauthorized_power_min")
          and finite(v("model", "unauthorized_power_max")),
          "must be >= unauthorized_power_min", "model", "unauthorized_power_max")
    check(v("model", "samples_per_block") >= 1, "must be >= 1", "model", "samples_per_block")
    model = SignalModel(v("model", "noise_power"), v("model", "authorized_power"),
                        (v("model", "unauthorized_power_min"), v("model", "unauthorized_power_max")),
                        v("model", "samples_per_block"))

    m = v("network", "sensor_count")
    check(m >= 1, "must be >= 1", "network", "sensor_count")
    gains = v("network", "gains")
    if len(gains) == 1:
        gains = gains * m
    check(len(gains) == m, f"needs 1 or {m} values", "network", "gains")
    check(all(g >= 0 for g in gains) and finite(gains), "gains must be finite and >= 0", "network", "gains")
    check(any(g > 0 for g in gains), "at least one gain must be positive", "network", "gains")
    check(v("network", "coverage_radius_m") > 0, "must be > 0", "network", "coverage_radius_m")
    network = SensorNetwork(tuple(gains), v("network", "coverage_radius_m"))

    for key in ("alpha", "beta"):
        check(0 < v("constraints", key) <= 1, "must be in (0, 1]", "constraints", key)
    constraints = ConstraintPair(v("constraints", "alpha"), v("constraints", "beta"))

    scheme = _enum(Scheme, v("detector", "scheme"), err, "detector", "scheme")
    method = _enum(Method, v("detector", "method"), err, "detector", "method")
    for s in v("experiment", "schemes"):
        _enum(Scheme, s, err, "experiment", "schemes")

    kind = _enum(FusionKind, v("fusion", "rule"), err, "fusion", "rule")
    k = v("fusion", "k")
    if kind is not FusionKind.HARD_K_OUT_OF_M and k is not None:
        raise err("k only applies to hard_k_out_of_m", "fusion", "k")
    if k is not None:
        check(1 <= k <= m, f"must be in [1, {m}]", "fusion", "k")
    rule = FusionRule(kind, k)

    draw = _enum(DrawRule, v("truth", "draw_rule"), err, "truth", "draw_rule")
    p2 = v("truth", "unauthorized_power")
    if draw is DrawRule.UNIFORM_OVER_RANGE and p2 is not None:
        raise err("a uniform draw rule takes no fixed power", "truth", "unauthorized_power")
    if p2 is not None:
        check(model.p2_min <= p2 <= model.p2_max, "must lie in the unauthorized power range", "truth",
              "unauthorized_power")
    truth = ScenarioTruth.for_hypothesis(Hypothesis.UNAUTHORIZED, model, draw, p2)

    check(v("experiment", "trials") >= 1, "must be >= 1", "experiment", "trials")
    check(0 <= v("experiment", "seed") < 2**64, "must fit in 64 bits", "experiment", "seed")
    for key, lo, hi in (("alpha_beta_grid", 0.0, 1.0), ("tradeoff_samples", 0, None),
                        ("grid_sensors", 0, None), ("grid_samples", 0, None)):
        g = v("experiment", key)
        check(len(g) > 0 and all(b > a for a, b in zip(g, g[1:])), "must be a non-empty increasing list",
              "experiment", key)
        check(g[0] > lo and (hi is None or g[-1] <= hi), f"values must be in ({lo}, {hi or 'inf'}]",
              "experiment", key)

    check(v("quickest", "trials") >= 100, "must be >= 100", "quickest", "trials")
    th = v("quickest", "thresholds")
    check(len(th) > 0 and all(x > 0 for x in th), "must be positive", "quickest", "thresholds")
    ct = v("quickest", "change_time")
    check(ct is None or ct >= 1, "must be >= 1 or never", "quickest", "change_time")
    pc = v("quickest", "post_change_power")
    check(pc is None or pc > model.noise_power, "must exceed noise_power", "quickest", "post_change_power")
    quickest = QuickestConfig(tuple(th), ct, v("quickest", "trials"), pc)

    return ScenarioConfig(
        model, network, constraints, scheme, method, rule, truth,
        v("experiment", "trials"), v("experiment", "seed"), tuple(v("experiment", "schemes")),
        tuple(v("experiment", "alpha_beta_grid")), tuple(v("experiment", "tradeoff_samples")),
        tuple(v("experiment", "grid_sensors")), tuple(v("experiment", "grid_samples")), quickest, source,
    )


def _enum(cls, value, err, section, key):
    try:
        return cls(value)
    except ValueError:
        choices = ", ".join(m.value for m in cls)
        raise err(f"unknown value {value!r}; expected one of {choices}", section, key) from None


def load(path) -> ScenarioConfig:
    path = Path(path)
    return loads(path.read_text(), source=path.name)
