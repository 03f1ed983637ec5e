"""Per-step numeric diagnostics as JSON lines (never routed through logging)."""

import os

import pandas as pd


class DiagnosticsWriter:
    """Collects records in memory and writes them once, in step order."""

    def __init__(self, path: str):
        self.path = path
        self.records: list[dict] = []

    def write(self, record: dict | None) -> None:
        if record:
            self.records.append(dict(record))

    def __len__(self) -> int:
        return len(self.records)

    def flush(self) -> str:
        os.makedirs(os.path.dirname(self.path) or ".", exist_ok=True)
        if not self.records:
            open(self.path, "w", encoding="utf-8").close()
            return self.path
        df = pd.DataFrame(self.records)
        df.to_json(self.path, orient="records", lines=True, double_precision=15)
        return self.path


def read_diagnostics(path: str) -> pd.DataFrame:
    if os.path.getsize(path) == 0:
        return pd.DataFrame()
    return pd.read_json(path, orient="records", lines=True)
