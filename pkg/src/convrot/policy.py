"""Per-layer precision and rotation assignment by ordered name patterns.

Patterns are globs over layer names: ``*`` matches any run of characters,
``{i}`` matches one non-negative integer, everything else is literal. The
first matching rule wins and the default applies otherwise.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from convrot.errors import ConvRotError, PolicyError
from convrot.pipeline import GroupSize, RotationSpec
from convrot.quant import QuantSpec

POLICY_VERSION = 1
_TOKEN = re.compile(r"\{[^{}]*\}|\*|[^{}*]+|[{}]")


@dataclass(frozen=True)
class LayerSpec:
    bits_w: int = 4
    bits_a: int = 4
    rotation: str = "regular"
    group_size: GroupSize = 256

    @property
    def label(self) -> str:
        return f"W{self.bits_w}A{self.bits_a}"

    def rotation_spec(self, seed: int = 0) -> RotationSpec:
        return RotationSpec(self.rotation, self.group_size, seed=seed)

    def quant_specs(self) -> tuple[QuantSpec, QuantSpec]:
        """``(weight_spec, activation_spec)``."""
        return QuantSpec(self.bits_w), QuantSpec(self.bits_a)

    def to_dict(self) -> dict:
        return {
            "bits_w": self.bits_w,
            "bits_a": self.bits_a,
            "rotation": self.rotation,
            "group_size": self.group_size,
        }


@dataclass(frozen=True)
class Rule:
    pattern: str
    spec: LayerSpec
    regex: re.Pattern = None  # type: ignore[assignment]

    def matches(self, name: str) -> bool:
        return self.regex.fullmatch(name) is not None


@dataclass(frozen=True)
class PrecisionPolicy:
    rules: tuple[Rule, ...]
    default: LayerSpec
    version: int = POLICY_VERSION

    def match_index(self, name: str) -> int | None:
        for i, rule in enumerate(self.rules):
            if rule.matches(name):
                return i
        return None

    def resolve(self, name: str) -> LayerSpec:
        return resolve(name, self)


def compile_pattern(pattern: str, index: int | None = None) -> re.Pattern:
    if not isinstance(pattern, str) or not pattern:
        raise PolicyError("pattern must be a non-empty string", index)
    parts = []
    for tok in _TOKEN.findall(pattern):
        if tok == "*":
            parts.append(".*")
        elif tok == "{i}":
            parts.append(r"(?:0|[1-9][0-9]*)")
        elif tok.startswith("{") or tok.startswith("}"):
            raise PolicyError(f"malformed placeholder {tok!r} in pattern {pattern!r}", index)
        else:
            parts.append(re.escape(tok))
    return re.compile("".join(parts))


def _spec_from(obj: object, index: int | None) -> LayerSpec:
    if not isinstance(obj, dict):
        raise PolicyError("spec must be an object", index)
    try:
        spec = LayerSpec(
            bits_w=obj["bits_w"],
            bits_a=obj["bits_a"],
            rotation=obj["rotation"],
            group_size=obj["group_size"],
        )
        # validate eagerly so bad rules fail at load time
        spec.rotation_spec()
        spec.quant_specs()
    except KeyError as e:
        raise PolicyError(f"missing field {e.args[0]!r}", index) from None
    except ConvRotError as e:
        raise PolicyError(str(e), index) from None
    return spec


def make_rule(pattern: str, spec: LayerSpec, index: int | None = None) -> Rule:
    return Rule(pattern, spec, compile_pattern(pattern, index))


def policy_from_dict(obj: dict) -> PrecisionPolicy:
    if not isinstance(obj, dict):
        raise PolicyError("policy must be a JSON object")
    if obj.get("version") != POLICY_VERSION:
        raise PolicyError(f"unsupported policy version {obj.get('version')!r}")
    raw_rules = obj.get("rules", [])
    if not isinstance(raw_rules, list):
        raise PolicyError("'rules' must be a list")
    rules = []
    for i, r in enumerate(raw_rules):
        if not isinstance(r, dict) or "pattern" not in r:
            raise PolicyError("rule needs a 'pattern'", i)
        rules.append(make_rule(r["pattern"], _spec_from(r, i), i))
    if "default" not in obj:
        raise PolicyError("policy needs a 'default' spec")
    return PrecisionPolicy(tuple(rules), _spec_from(obj["default"], None), obj["version"])


def loads(text: str) -> PrecisionPolicy:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise PolicyError(f"invalid JSON: {e}") from None
    return policy_from_dict(obj)


def load(path: str | Path) -> PrecisionPolicy:
    return loads(Path(path).read_text())


def dumps(policy: PrecisionPolicy) -> str:
    """Canonical JSON: fixed key order, two-space indent, trailing newline."""
    obj = {
        "version": policy.version,
        "rules": [{"pattern": r.pattern, **r.spec.to_dict()} for r in policy.rules],
        "default": policy.default.to_dict(),
    }
    return json.dumps(obj, indent=2) + "\n"


def resolve(name: str, policy: PrecisionPolicy) -> LayerSpec:
    i = policy.match_index(name)
    return policy.default if i is None else policy.rules[i].spec


@dataclass(frozen=True)
class Coverage:
    total: int
    per_rule: tuple[int, ...]
    default_count: int

    @property
    def per_rule_fraction(self) -> tuple[float, ...]:
        return tuple(c / self.total for c in self.per_rule)

    @property
    def non_default_fraction(self) -> float:
        return (self.total - self.default_count) / self.total


def coverage_stats(names: list[str], policy: PrecisionPolicy) -> Coverage:
    """How many names each rule resolves (first match), and the default share."""
    if not names:
        raise PolicyError("coverage needs at least one layer name")
    counts = [0] * len(policy.rules)
    default = 0
    for n in names:
        i = policy.match_index(n)
        if i is None:
            default += 1
        else:
            counts[i] += 1
    return Coverage(len(names), tuple(counts), default)


def read_names(path: str | Path) -> list[str]:
    return parse_names(Path(path).read_text())


def parse_names(text: str) -> list[str]:
    """One name per line; blank lines and ``#`` comments are skipped."""
    return [s for s in (l.strip() for l in text.splitlines()) if s and not s.startswith("#")]


def flux_policy() -> PrecisionPolicy:
    """The shipped FLUX.1 mixed-precision policy (about a fifth of layers at W8A8)."""
    return loads(resources.files("convrot.data").joinpath("flux_policy.json").read_text())


def flux_layer_names() -> list[str]:
    """Reconstructed list of FLUX.1 transformer-block linear layer names."""
    text = resources.files("convrot.data").joinpath("flux_linear_layers.txt").read_text()
    return parse_names(text)
