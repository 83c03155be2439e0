from .service import run_simulation, truth_frame

__all__ = ["run_simulation", "truth_frame"]
