"""Sequential-deformation virtual try-on conditions at desk scale."""

from .condition import ConditionGenerator, ConditionOutputs, TopologyConfig
from .config import RunConfig, load_config, parse_config, serialize_config
from .data import Dataset, Sample, ScenarioSpec, generate_pair, read_dataset, write_dataset
from .errors import ArgumentError, ConfigurationError, FormatError, NumericError, VersionError
from .image_gen import ImageGenerator, TryOnOutputs, compose_tryon
from .kernels import finite_diff_check, grid_sample_2d, grid_sample_3d

__version__ = "0.1.0"
