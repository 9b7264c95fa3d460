"""small value types shared across the package."""


class Assignment(tuple):
    """per-node labels, 0-based."""

    def __new__(cls, labels=()):
        return super().__new__(cls, (int(x) for x in labels))

    def __repr__(self):
        return f"Assignment({list(self)})"
