"""Diffusion-based trajectory planning on 2D mazes.

The package builds plans by denoising whole state-action matrices under
endpoint constraints. Three planner families share one model stack: flat
plans over every timestep, sparse plans over every K-th timestep, and
hierarchical plans where a sparse model proposes subgoals that a short
segment model then connects.
"""

from .diffusion import (
    Constraint,
    NoiseSchedule,
    SampleConfig,
    build_schedule,
    sample_plan,
    sample_plan_batch,
)
from .maze import MazeSpec, builtin_maze, generate_dataset, load_maze_file
from .nets import NetConfig, load_checkpoint, save_checkpoint
from .planners import (
    DensePlanner,
    EpisodeConfig,
    FlatPlanner,
    HierarchicalPlanner,
    LevelModel,
    PlanResult,
    run_episode,
)
from .trajectory import Dataset, Layout, Trajectory, load_dataset, save_dataset
from .training import TrainConfig, WindowSpec, train_denoiser, train_guidance

__version__ = "0.1.0"

__all__ = [
    "Constraint",
    "Dataset",
    "DensePlanner",
    "EpisodeConfig",
    "FlatPlanner",
    "HierarchicalPlanner",
    "Layout",
    "LevelModel",
    "MazeSpec",
    "NetConfig",
    "NoiseSchedule",
    "PlanResult",
    "SampleConfig",
    "TrainConfig",
    "Trajectory",
    "WindowSpec",
    "build_schedule",
    "builtin_maze",
    "generate_dataset",
    "load_checkpoint",
    "load_dataset",
    "load_maze_file",
    "run_episode",
    "sample_plan",
    "sample_plan_batch",
    "save_checkpoint",
    "save_dataset",
    "train_denoiser",
    "train_guidance",
    "__version__",
]
