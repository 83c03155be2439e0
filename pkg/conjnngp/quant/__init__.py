# enables imports "conjnngp.quant.*"
from .conjugate import fit_latent, fit_response, sample_latent, sample_response
from .geometry import build_prediction_neighbors, build_training_neighbors, order_locations
from .nngp_factor import build_factor, build_prediction_factor
from .sparse_solver import cg_solve
