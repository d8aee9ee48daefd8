from .config import ConfigError, DependencyError, PipelineConfig, load_config, write_config
from .manifest import LockHeldError, append_record, output_lock, read_manifest, sha256_file
from .stages import COMMANDS, artifact_path

__all__ = [
    "COMMANDS",
    "ConfigError",
    "DependencyError",
    "LockHeldError",
    "PipelineConfig",
    "append_record",
    "artifact_path",
    "load_config",
    "output_lock",
    "read_manifest",
    "sha256_file",
    "write_config",
]
