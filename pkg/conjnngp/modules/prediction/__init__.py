from .service import run_prediction

__all__ = ["run_prediction"]
