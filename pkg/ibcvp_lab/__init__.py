from .settings import settings
from .logconf import logger

__all__ = ["settings", "logger"]
