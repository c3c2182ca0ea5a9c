"""Exception hierarchy shared across the toolkit.

Every domain error derives from ReidError so the CLI can map failures to
exit codes uniformly. Module-specific subclasses live next to the code
that raises them.
"""


class ReidError(Exception):
    """Base class for all toolkit errors."""
