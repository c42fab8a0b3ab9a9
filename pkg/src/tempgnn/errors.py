"""Exception types raised across the package."""


class TemporalGraphError(Exception):
    """Base class for all structured errors raised by tempgnn."""


class NodeIdError(TemporalGraphError, IndexError):
    def __init__(self, node, num_nodes):
        self.node = node
        self.num_nodes = num_nodes
        super().__init__(f"node id {node} outside [0, {num_nodes})")


class EdgeIdError(TemporalGraphError, IndexError):
    def __init__(self, eid, num_edges):
        self.eid = eid
        self.num_edges = num_edges
        super().__init__(f"edge id {eid} outside [0, {num_edges})")


class TimestampError(TemporalGraphError, ValueError):
    pass


class ChronologyError(TemporalGraphError, ValueError):
    """A pointer was asked to move backwards in time."""

    def __init__(self, node, target, edge_time):
        self.node = node
        self.target = target
        self.edge_time = edge_time
        super().__init__(
            f"node {node}: target time {target!r} precedes already-passed edge at {edge_time!r}"
        )


class DimensionError(TemporalGraphError, ValueError):
    pass


class PhaseError(TemporalGraphError, RuntimeError):
    """Batch steps were executed out of order (e.g. mailbox write before embeddings)."""


class ScheduleError(TemporalGraphError, ValueError):
    pass


class ConfigError(TemporalGraphError, ValueError):
    pass


class DatasetError(TemporalGraphError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class FormatError(TemporalGraphError, ValueError):
    """Binary file has a wrong magic number, version or layout."""
