import pytest

from optbench import expand_grid, merge_defaults, parse_experiment


def resolve(yaml_text: str) -> list[dict]:
    """Parse + merge + expand an experiment YAML."""
    return expand_grid(merge_defaults(parse_experiment(yaml_text)))


QUAD_ADAMW = """
task:
  name: quadratic
  max_epochs: {epochs}
optimizer:
  name: adamw_baseline
engine:
  seed: {seed}
"""


def quad_config(epochs: int = 5, seed: int = 42) -> dict:
    return resolve(QUAD_ADAMW.format(epochs=epochs, seed=seed))[0]


@pytest.fixture
def workdir(tmp_path):
    return tmp_path / "run"
