"""Exception hierarchy shared across the package."""


class ContTuneError(Exception):
    """Base class for all domain errors."""


class ConfigError(ContTuneError):
    """Invalid configuration document; message carries the offending field path."""


# --- DAG / assignment -------------------------------------------------------

class DagValidationError(ContTuneError):
    pass


class CyclicGraph(DagValidationError):
    pass


class DanglingEdge(DagValidationError):
    pass


class EmptyDag(DagValidationError):
    pass


class DegreeViolation(DagValidationError):
    pass


class MissingAssignment(ContTuneError):
    pass


class NonPositiveParallelism(ContTuneError):
    pass


class AssignmentMismatch(ContTuneError):
    pass


# --- simulator ---------------------------------------------------------------

class UnknownSource(ContTuneError):
    pass


class ZeroUsefulTime(ContTuneError):
    pass


class ZeroAllTime(ContTuneError):
    pass


# --- history store -----------------------------------------------------------

class CorruptRecord(ContTuneError):
    def __init__(self, path, line_no, reason):
        super().__init__(f"{path}:{line_no}: {reason}")
        self.line_no = line_no


# --- surrogate ----------------------------------------------------------------

class EmptyTrainingSet(ContTuneError):
    pass


class SingularCovariance(ContTuneError):
    pass


# --- tuners --------------------------------------------------------------------

class PMaxExceeded(ContTuneError):
    pass


class ZeroProcessingAbility(ContTuneError):
    pass


# --- workloads / harness ---------------------------------------------------------

class NonContiguousTrace(ContTuneError):
    pass


class NegativeRate(ContTuneError):
    pass


class UnknownTuner(ContTuneError):
    pass


class ScenarioMismatch(ContTuneError):
    pass


class Infeasible(ContTuneError):
    pass
