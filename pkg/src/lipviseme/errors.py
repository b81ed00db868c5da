"""Cross-module failure types with distinct process exit codes at the CLI."""


class ConfigError(Exception):
    """Invalid configuration or usage (CLI exit code 1)."""


class RuntimeFailure(Exception):
    """Runtime breakdown such as a non-finite loss or corrupt file (exit code 2)."""


class CheckpointError(RuntimeFailure):
    """Unreadable, truncated, or version-mismatched checkpoint file."""
