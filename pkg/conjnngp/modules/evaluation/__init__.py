from .service import build_metrics_report, run_evaluation

__all__ = ["build_metrics_report", "run_evaluation"]
