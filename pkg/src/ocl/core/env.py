import os
from typing import Optional

DATA_ROOT_VAR = "OCL_DATA_ROOT"


def load_env(dotenv_path: str = ".env") -> None:
    try:
        from dotenv import load_dotenv

        load_dotenv(dotenv_path)
    except Exception:
        pass  # ok if dotenv not installed


def resolve_data_root(cli_value: Optional[str] = None) -> Optional[str]:
    """--data wins over OCL_DATA_ROOT; None when neither is set."""
    if cli_value:
        return cli_value
    val = os.getenv(DATA_ROOT_VAR, "").strip()
    return val or None
