from .datasets import (Dataset, generate_blobs, generate_synthetic, load_csv_dir, load_nds,
                       save_nds)
from .evaluation import evaluate
from .sweep import SweepRecord, SweepReport, STANDARD_RATES, fine_rates, run_sweep
from .report import read_report, write_report

__all__ = [
    "Dataset", "generate_blobs", "generate_synthetic", "load_csv_dir", "load_nds", "save_nds",
    "evaluate", "SweepRecord", "SweepReport", "STANDARD_RATES", "fine_rates", "run_sweep",
    "read_report", "write_report",
]
