import pandas as pd
from pathlib import Path
from .async_utils import run_sync
from ibcvp_lab.logconf import logger


def read_csv(path: str | Path) -> pd.DataFrame:
    try:
        return pd.read_csv(path, encoding="utf-8").dropna(axis=1, how="all")
    except UnicodeDecodeError:
        return pd.read_csv(path, encoding="latin-1").dropna(axis=1, how="all")
    except Exception as exc:
        logger.error("CSV read failed: %s", exc, exc_info=False)
        raise


def save_csv(df: pd.DataFrame, path: str | Path) -> Path:
    """UTF-8, header row, LF endings, 17 significant digits."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, float_format="%.17g", lineterminator="\n", encoding="utf-8")
    return path


@run_sync
def write_csv(df: pd.DataFrame, path: str | Path) -> Path:
    """
    Write a DataFrame on a thread pool so it doesn't block the event loop.
    """
    return save_csv(df, path)
