from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, Field, ValidationError, field_validator

from ibcvp_lab.errors import InvalidInputError
from ibcvp_lab.models.grid import GridParams
from ibcvp_lab.settings import settings

SCENARIOS = (
    "wave-convergence", "operator-identities", "gauge-propagation",
    "boundary-identities", "solve-ibcvp", "contraction-scan", "selfadjoint",
    "uniqueness-probe", "multipatch", "cylinder", "corner-necessity",
)

Profile = Literal["none", "bump", "gaussian", "curved_corner"]


class ScenarioConfig(BaseModel):
    """
    One scenario run. Flat keys; grid keys are gathered into GridParams by
    `grid_params()`.
    """

    scenario: str = "solve-ibcvp"
    # grid
    n: int = Field(settings.n, ge=2, le=3)
    dt: float = Field(settings.dt, gt=0)
    dx: float = Field(settings.dx, gt=0)
    t_max: float = Field(settings.t_max, gt=0)
    l1: float = Field(settings.l1, gt=0)
    la: float = Field(settings.la, gt=0)
    cfl_bound: float = Field(settings.cfl_bound, gt=0)
    resolution_scale: int = Field(1, ge=1)
    # background
    alpha0: float = 0.0
    profile: Profile = "none"
    eps: float = Field(0.0, ge=0)
    profile_radius: float = Field(0.6, gt=0)
    # target data
    target_profile: Literal["zero", "source_bump", "ell_bump", "ambient"] = "ambient"
    amplitude: float = 1e-2
    alpha_prime: float = 0.1        # corner-necessity perturbation
    seed: int = 0
    # solver
    m_max: int = Field(settings.m_max, ge=1)
    tol: float = Field(settings.iter_tol, gt=0)
    mode: Literal["staged", "on_shell"] = "staged"
    eps_values: list[float] = Field(default_factory=lambda: [0.02, 0.04])
    # cylinder
    alphas: list[float] = Field(default_factory=lambda: [-0.1, 0.0, 0.1])
    cylinder_t_max: float = Field(5.0, gt=0)
    cylinder_mode: bool = False
    output_dir: Path = settings.output_dir

    @field_validator("scenario")
    @classmethod
    def _known_scenario(cls, value: str) -> str:
        if value not in SCENARIOS:
            raise ValueError(f"unknown scenario {value!r}; expected one of {', '.join(SCENARIOS)}")
        return value

    # ------------------------------------------------------------------ #
    def grid_params(self) -> GridParams:
        k = self.resolution_scale
        return GridParams(
            n=self.n, dt=self.dt / k, dx=self.dx / k, t_max=self.t_max,
            l1=self.l1, la=self.la, cfl_bound=self.cfl_bound,
        )

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode="json", exclude={"output_dir"}), sort_keys=True)

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()

    @classmethod
    def build(cls, values: dict) -> "ScenarioConfig":
        try:
            return cls.model_validate(values)
        except ValidationError as exc:
            raise InvalidInputError(f"invalid scenario config: {exc}") from exc

    @classmethod
    def parse_text(cls, text: str) -> dict:
        """JSON object, or one `key=value` per line (# comments allowed)."""
        stripped = text.strip()
        if stripped.startswith("{"):
            try:
                return json.loads(stripped)
            except json.JSONDecodeError as exc:
                raise InvalidInputError(f"config is not valid JSON: {exc}") from exc
        values: dict = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InvalidInputError(f"config line {lineno}: expected key=value")
            key, raw = (part.strip() for part in line.split("=", 1))
            if "," in raw or raw.startswith("["):
                values[key] = [float(v) for v in raw.strip("[]").split(",") if v.strip()]
            else:
                values[key] = raw
        return values

    @classmethod
    def from_file(cls, path: str | Path, **overrides) -> "ScenarioConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise InvalidInputError(f"cannot read config {path}: {exc}") from exc
        values = cls.parse_text(text)
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls.build(values)


@dataclass
class RunArtifacts:
    scenario: str
    out_dir: Path
    summary: dict
    files: list[Path] = field(default_factory=list)
    manifest: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.summary.get("pass", False))
