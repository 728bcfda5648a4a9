"""Adaptive skipping of noise predictions in diffusion sampling, driven by a third-order latent difference."""

from .config import RunConfig, load_config
from .controller import ControllerConfig, RunReport, run_adaptive, run_baseline
from .denoisers import GmmDenoiser, GmmModel
from .latent import LatentState, NormKind, Trajectory
from .schedulers import (
    SchedulerPlan,
    build_ddim_plan,
    build_euler_ve_plan,
    build_sde_euler_plan,
    initial_latent,
)
from .search import SearchTask, brute_force_search, greedy_search

__version__ = "0.1.0"

__all__ = [
    "ControllerConfig", "GmmDenoiser", "GmmModel", "LatentState", "NormKind", "RunConfig",
    "RunReport", "SchedulerPlan", "SearchTask", "Trajectory", "brute_force_search",
    "build_ddim_plan", "build_euler_ve_plan", "build_sde_euler_plan", "greedy_search",
    "initial_latent", "load_config", "run_adaptive", "run_baseline",
]
