from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, Field

from ibcvp_lab.settings import settings


class IterationOptions(BaseModel):
    """
    Stage schedule of the linear solve. `staged` runs Step 0, the chi
    correction and E_2..E_{m_max}; `on_shell` stops after chi.
    """

    m_max: int = Field(settings.m_max, ge=1)
    tol: float = Field(settings.iter_tol, ge=0)
    mode: Literal["staged", "on_shell"] = "staged"
    stall_ratio: float = Field(settings.stall_ratio, gt=0)
    stall_count: int = Field(settings.stall_count, ge=1)
    eps_max: float = Field(settings.eps_max, gt=0)
    eps_order: int = Field(0, ge=0, le=3)


class PatchChart(BaseModel):
    """A corner chart covering |x^A - center| <= radius near Sigma."""

    center: tuple[float, ...]
    radius: float = Field(gt=0)
    margin: float = Field(0.3, ge=0)
