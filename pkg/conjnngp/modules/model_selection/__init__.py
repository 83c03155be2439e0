from .service import cv_score, cv_search, make_folds, overall_best, run_cv

__all__ = ["cv_score", "cv_search", "make_folds", "overall_best", "run_cv"]
