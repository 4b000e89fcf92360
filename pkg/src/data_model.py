import json
import logging
import os
import tempfile

import pandas as pd

# Frozen column order of runs.csv
RUN_COLUMNS = [
    "policy", "p_x", "replicate", "round", "arm", "yield", "profit_realized",
    "profit_expected", "regret_inst", "regret_cum", "explored", "theta_json",
]


def atomic_write_text(path, text):
    directory = os.path.dirname(os.path.abspath(path))
    fd, temp_path = tempfile.mkstemp(prefix=".tmp_", suffix=os.path.splitext(path)[1], dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
            handle.write(text)
        os.replace(temp_path, path)
    finally:
        if os.path.exists(temp_path):
            os.remove(temp_path)


class RunTable:
    """
    Per-round simulation log held as a pandas DataFrame, one row per
    (policy, p_x, replicate, round).
    """

    def __init__(self, df=None):
        self.df = df if df is not None else pd.DataFrame(columns=RUN_COLUMNS)
        self.filepath = None
        self.logger = logging.getLogger(__name__)

    @classmethod
    def from_records(cls, records):
        rows = []
        for record in records:
            for entry in record.rounds:
                rows.append({
                    "policy": record.policy,
                    "p_x": record.p_x,
                    "replicate": record.replicate,
                    "round": entry.t,
                    "arm": entry.arm,
                    "yield": entry.yield_,
                    "profit_realized": entry.profit_realized,
                    "profit_expected": entry.profit_expected,
                    "regret_inst": entry.regret_inst,
                    "regret_cum": entry.regret_cum,
                    "explored": bool(entry.explored),
                    "theta_json": json.dumps(None if entry.theta is None else [float(v) for v in entry.theta]),
                })
        return cls(pd.DataFrame(rows, columns=RUN_COLUMNS))

    def load_data(self, filepath):
        self.filepath = filepath
        try:
            # theta_json holds the literal "null" for policies without an estimate
            self.df = pd.read_csv(filepath, keep_default_na=False)
        except (OSError, pd.errors.ParserError) as e:
            self.logger.error(f"Failed to load run table {filepath}: {e}")
            raise
        missing = [c for c in RUN_COLUMNS if c not in self.df.columns]
        if missing:
            raise ValueError(f"{filepath} is missing columns {missing}")
        self.df = self.df[RUN_COLUMNS]
        self.logger.info(f"Loaded run table with shape {self.df.shape} from {filepath}")
        return self

    def save_data(self, filepath):
        """Writes runs.csv atomically; the bytes depend only on the table contents."""
        self.filepath = filepath
        try:
            atomic_write_text(filepath, self.df.to_csv(index=False, lineterminator="\n"))
        except OSError as e:
            raise OSError(f"Failed to write run table {filepath}: {e}") from e
        self.logger.info(f"Saved {self.row_count()} rows to {filepath}")

    def thetas(self):
        """theta_json column decoded to lists (None where no estimate exists)."""
        return [json.loads(v) for v in self.df["theta_json"]]

    def final_rows(self):
        """Last round of every (policy, p_x, replicate) run."""
        keys = ["policy", "p_x", "replicate"]
        return self.df.sort_values(keys + ["round"]).groupby(keys, sort=False).tail(1)

    def row_count(self):
        return len(self.df)


def save_summary(summary_dict, filepath):
    logger = logging.getLogger(__name__)
    try:
        atomic_write_text(filepath, json.dumps(summary_dict, indent=2) + "\n")
    except OSError as e:
        raise OSError(f"Failed to write summary {filepath}: {e}") from e
    logger.info(f"Saved summary to {filepath}")
