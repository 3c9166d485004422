from typing import List, Sequence


class DomainError(ValueError):
    pass


class DegenerateGeometryError(DomainError):
    pass


class MeasureValidationError(DomainError):
    pass


class ConfigValidationError(DomainError):
    pass


class SolverDivergenceError(RuntimeError):
    def __init__(self, t: float, message: str = ""):
        self.t = t
        super().__init__(message or f"Non-finite values produced at t={t:.17g}")


class MultivaluedGraphError(RuntimeError):
    def __init__(self, nodes: Sequence[int], counts: Sequence[int]):
        self.nodes: List[int] = list(nodes)
        self.counts: List[int] = list(counts)
        shown = ", ".join(
            f"{i} ({c} crossings)" for i, c in zip(self.nodes[:10], self.counts)
        )
        more = "" if len(self.nodes) <= 10 else f" and {len(self.nodes) - 10} more"
        super().__init__(f"Curve is not a graph at nodes {shown}{more}")
