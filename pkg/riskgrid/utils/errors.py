"""
Exception hierarchy for riskgrid

Every error carries the pipeline stage it was raised in and the process exit
code the CLI should return for it (1 = input error, 2 = numeric failure).
"""

from .constants import EXIT_INPUT_ERROR, EXIT_NUMERIC_ERROR


class RiskGridError(Exception):
    """Base class for all riskgrid failures"""

    exit_code = EXIT_INPUT_ERROR
    default_stage = 'riskgrid'

    def __init__(self, message, stage=None):
        super().__init__(message)
        self.message = message
        self.stage = stage or self.default_stage

    def __str__(self):
        return f"[{self.stage}] {self.message}"


class ConfigError(RiskGridError):
    default_stage = 'config'


class ParameterError(RiskGridError):
    default_stage = 'parameters'


class IngestError(RiskGridError):
    default_stage = 'ingest'


class InvalidGeometryError(RiskGridError):
    default_stage = 'grid'


class ProjectionError(RiskGridError):
    default_stage = 'ingest'


class InsufficientPointsError(RiskGridError):
    default_stage = 'features'


class NamingConflictError(RiskGridError):
    default_stage = 'features'


class SchemaMismatchError(RiskGridError):
    default_stage = 'models'


class LengthMismatchError(RiskGridError):
    default_stage = 'weights'


class NotEnoughCellsError(RiskGridError):
    default_stage = 'weights'


class GenerationError(RiskGridError):
    default_stage = 'generate'


class NumericError(RiskGridError):
    exit_code = EXIT_NUMERIC_ERROR
    default_stage = 'numeric'


class ZeroVarianceError(NumericError):
    default_stage = 'autocorr'


class CollinearityError(NumericError):
    default_stage = 'models'


class DomainError(NumericError):
    default_stage = 'spatial_econ'


class UndefinedMetricError(NumericError):
    default_stage = 'eval'
