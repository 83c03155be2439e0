from .service import fit_dataset, load_draws, load_posterior

__all__ = ["fit_dataset", "load_draws", "load_posterior"]
