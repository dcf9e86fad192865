"""Run configuration: a schema-versioned JSON document driving the CLI."""

from __future__ import annotations

import json
from dataclasses import dataclass

from .exceptions import SpecValidationError
from .learners import LearnerSpec

CONFIG_KEY = "hetdid_config"
CONFIG_VERSION = 1

MODES = ("catt", "iv", "covshift")
DATA_SOURCES = ("dgp", "csv", "semisynthetic", "iv_dgp")
TRANSFORM_KINDS = ("parallel_trends", "lagged_outcome", "event_study")


@dataclass
class RunConfig:
    """Validated wrapper over the raw config dict.

    Exactly one data source; learner specs parsed into ``LearnerSpec``;
    ``seed`` / ``jobs`` / ``output_dir`` are overridable from the command line.
    """

    raw: dict

    def __post_init__(self):
        if not isinstance(self.raw, dict):
            raise SpecValidationError("config must be a JSON object")
        version = self.raw.get(CONFIG_KEY)
        if version != CONFIG_VERSION:
            raise SpecValidationError(
                f"config must carry {CONFIG_KEY!r} = {CONFIG_VERSION}, got {version!r}"
            )
        data = self.raw.get("data")
        if not isinstance(data, dict):
            raise SpecValidationError("config needs a 'data' object")
        sources = [k for k in DATA_SOURCES if k in data]
        if len(sources) != 1:
            raise SpecValidationError(
                f"config data must name exactly one source of {DATA_SOURCES}, got {sources}"
            )
        if self.mode not in MODES:
            raise SpecValidationError(f"mode must be one of {MODES}")
        t = self.raw.get("transform", {}).get("kind", "parallel_trends")
        if t not in TRANSFORM_KINDS:
            raise SpecValidationError(f"unknown transform kind {t!r}")

    # -- generic accessors -------------------------------------------------
    @property
    def mode(self) -> str:
        return self.raw.get("mode", "catt")

    @property
    def seed(self) -> int:
        return int(self.raw.get("seed", 0))

    @property
    def jobs(self) -> int:
        return int(self.raw.get("jobs", 1))

    @property
    def output_dir(self) -> str:
        return self.raw.get("output_dir", "hetdid_out")

    @property
    def data_source(self) -> tuple[str, dict]:
        data = self.raw["data"]
        for k in DATA_SOURCES:
            if k in data:
                return k, data[k]
        raise SpecValidationError("no data source")  # unreachable after validation

    @property
    def transform(self) -> dict:
        t = dict(self.raw.get("transform", {}))
        t.setdefault("kind", "parallel_trends")
        t.setdefault("pre", 0)
        t.setdefault("post", 1)
        t.setdefault("include_cohort", False)
        return t

    @property
    def x_cols(self) -> list:
        return list(self.raw.get("x_cols", []))

    @property
    def learner(self) -> str:
        return self.raw.get("learner", "dr")

    @property
    def n_folds(self) -> int:
        return int(self.raw.get("n_folds", 5))

    @property
    def clip(self) -> float:
        return float(self.raw.get("clip", 0.01))

    @property
    def val_fraction(self) -> float:
        return float(self.raw.get("val_fraction", 0.25))

    def spec(self, group: str, name: str, default_kind: str | None = None) -> LearnerSpec:
        block = self.raw.get(group, {})
        if name in block:
            return LearnerSpec.from_dict(block[name])
        if default_kind is None:
            raise SpecValidationError(f"config lacks {group}.{name}")
        return LearnerSpec(kind=default_kind)

    def with_overrides(self, seed=None, jobs=None, output_dir=None) -> "RunConfig":
        raw = json.loads(json.dumps(self.raw))
        if seed is not None:
            raw["seed"] = int(seed)
        if jobs is not None:
            raw["jobs"] = int(jobs)
        if output_dir is not None:
            raw["output_dir"] = str(output_dir)
        return RunConfig(raw)

    def resolved_json(self) -> str:
        return json.dumps(self.raw, sort_keys=True, indent=2)


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return RunConfig(json.load(fh))
