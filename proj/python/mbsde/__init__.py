"""Monte Carlo solvers for multidimensional BSDEs.

Configs are plain dicts with the same schema as the JSON files read by the
``mbsde`` command line tool.
"""

import json

from . import _core
from ._core import ConfigError, SolverError

__all__ = ["ConfigError", "SolverError", "scenarios", "normalize_config", "run", "verify", "sweep", "oracle"]

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGENCE, EXIT_BOUND = 0, 1, 2, 3


def _text(config):
    return config if isinstance(config, str) else json.dumps(config)


def scenarios():
    """Library scenarios with their default horizon and accepted parameters."""
    return json.loads(_core.scenarios())


def normalize_config(config):
    """Validated config with every default filled in."""
    return json.loads(_core.normalize_config(_text(config)))


def run(config, out=None):
    """Solve along the configured route. Returns exit_code, message, summary,
    diagnostics, knots_csv, reports_jsonl and checks. Writes the artifacts
    into ``out`` when given."""
    return json.loads(_core.run(_text(config), out or ""))


def verify(config, out=None):
    """run() plus validation, consistency, backend agreement and oracle rows."""
    return json.loads(_core.verify(_text(config), out or ""))


def sweep(config, parameter, values):
    """Convergence table over "N" or "M"."""
    return json.loads(_core.sweep(_text(config), parameter, list(values)))


def oracle(config):
    """Nested reference for Y_0 and the scenario's own oracle where it has one."""
    return json.loads(_core.oracle(_text(config)))
