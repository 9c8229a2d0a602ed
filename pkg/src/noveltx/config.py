"""Study configuration: which codes are treatments and steroids, window lengths, features."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .cohort import DEFAULT_ONSET_DAYS, DEFAULT_WASHOUT_DAYS, ConfigurationError
from .features import FeatureSpec


@dataclass
class StudyConfig:
    treatment_codes: dict[str, str]
    steroid_codes: list[str]
    onset_days: int = DEFAULT_ONSET_DAYS
    washout_days: int = DEFAULT_WASHOUT_DAYS
    features: list[FeatureSpec] = field(default_factory=list)

    def __post_init__(self):
        if self.washout_days <= 0:
            raise ConfigurationError("washout_days must be positive")
        if self.onset_days < 0:
            raise ConfigurationError("onset_days must be nonnegative")
        overlap = set(self.treatment_codes) & set(self.steroid_codes)
        if overlap:
            raise ConfigurationError(f"codes listed as both treatment and steroid: {sorted(overlap)}")

    @property
    def treatments(self) -> list[str]:
        return sorted(set(self.treatment_codes.values()))

    @classmethod
    def from_dict(cls, data: dict) -> "StudyConfig":
        return cls(
            treatment_codes=dict(data["treatment_codes"]),
            steroid_codes=list(data["steroid_codes"]),
            onset_days=int(data.get("onset_days", DEFAULT_ONSET_DAYS)),
            washout_days=int(data.get("washout_days", DEFAULT_WASHOUT_DAYS)),
            features=[FeatureSpec.from_dict(d) for d in data.get("features", [])],
        )

    def to_dict(self) -> dict:
        return {
            "treatment_codes": dict(sorted(self.treatment_codes.items())),
            "steroid_codes": sorted(self.steroid_codes),
            "onset_days": self.onset_days,
            "washout_days": self.washout_days,
            "features": [f.to_dict() for f in self.features],
        }


def load_study(path) -> StudyConfig:
    return StudyConfig.from_dict(json.loads(Path(path).read_text()))


def save_study(config: StudyConfig, path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2) + "\n")
