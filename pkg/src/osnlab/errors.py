"""Exception hierarchy shared by all osnlab modules."""


class OSNLabError(Exception):
    """Base class for every error raised by osnlab."""


class SelfLoopError(OSNLabError, ValueError):
    """An edge joins a node to itself."""


class GraphMLError(OSNLabError, ValueError):
    pass


class MalformedGraphMLError(GraphMLError):
    pass


class DirectedGraphError(GraphMLError):
    pass


class DuplicateNodeError(GraphMLError):
    pass


class UnknownNodeError(GraphMLError):
    pass


class EdgeListParseError(OSNLabError, ValueError):
    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = path
        self.line_no = line_no


class NodeNotFoundError(OSNLabError, KeyError):
    def __str__(self):
        return f"node not found: {self.args[0]!r}"


class ConfigError(OSNLabError, ValueError):
    pass


class IntegrityError(OSNLabError):
    def __init__(self, problems):
        self.problems = list(problems)
        shown = "; ".join(self.problems[:10])
        more = f" (+{len(self.problems) - 10} more)" if len(self.problems) > 10 else ""
        super().__init__(f"integrity check failed: {shown}{more}")


class UndefinedMetricError(OSNLabError, ValueError):
    """A metric has no value for this input (e.g. no connected pairs)."""


class CrawlError(OSNLabError):
    pass


class LoginError(CrawlError):
    pass


class StageError(OSNLabError):
    def __init__(self, stage, cause):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause
