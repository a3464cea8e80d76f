from __future__ import annotations


class ConfigError(ValueError):
    """Invalid parameter; ``field`` names the offending setting."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class ResourceBudgetError(RuntimeError):
    """A request exceeds the memory or cell budget; ``limit`` names which."""

    def __init__(self, limit: str, message: str):
        super().__init__(f"{limit}: {message}")
        self.limit = limit


# desk-scale caps
MAX_CELLS = 10**8
MAX_FIELD_BYTES = 2 * 1024**3


def check_budget(n_cells: int, what: str = "field") -> None:
    if n_cells > MAX_CELLS:
        raise ResourceBudgetError("max_cells", f"{what} needs {n_cells} cells > {MAX_CELLS}")
    if 8 * n_cells > MAX_FIELD_BYTES:
        raise ResourceBudgetError("max_field_bytes", f"{what} needs {8 * n_cells} bytes > {MAX_FIELD_BYTES}")
