from typing import Optional

from fastapi.responses import JSONResponse


class DailyDoseError(Exception):
    """Base class for every failure the pipeline raises on purpose."""


class ConfigError(DailyDoseError):
    pass


# Cohort / EHR store
class CohortError(DailyDoseError):
    pass


class MissingDirectoryError(CohortError):
    pass


class MalformedDocumentError(CohortError):
    def __init__(self, path, message: str, line: Optional[int] = None):
        self.path = str(path)
        self.line = line
        self.message = message
        where = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{where}: {message}")


class DanglingReferenceError(CohortError):
    pass


class UnknownPatientError(CohortError, KeyError):
    def __str__(self):
        return f"unknown patient: {self.args[0]}"


class UnknownPhysicianError(CohortError, KeyError):
    def __str__(self):
        return f"unknown physician: {self.args[0]}"


# Trial registry
class RegistryError(DailyDoseError):
    pass


class RegistrySearchError(RegistryError):
    pass


class UnknownTrialError(RegistryError, KeyError):
    def __str__(self):
        return f"unknown trial: {self.args[0]}"


class InvalidTrialIdError(RegistryError, ValueError):
    pass


# Agent runtime
class AgentError(DailyDoseError):
    pass


class UnknownTemplateError(AgentError):
    pass


class UnboundPlaceholderError(AgentError):
    def __init__(self, placeholder: str):
        self.placeholder = placeholder
        super().__init__(f"unbound placeholder: {placeholder}")


class UnknownToolError(AgentError):
    pass


class ToolArgumentError(AgentError):
    pass


# Output parsing
class ParseError(DailyDoseError):
    pass


class NoSummaryError(ParseError):
    pass


class SummaryTypeError(ParseError):
    pass


class MissingScopeError(ParseError):
    pass


class UnparseableSummaryError(ParseError):
    def __init__(self, message: str, raw: str):
        self.raw = raw
        super().__init__(message)


# Clinical logic
class ClinicalRuleError(DailyDoseError, ValueError):
    pass


class MatcherError(DailyDoseError):
    pass


# Digest, delivery, archive
class DigestError(DailyDoseError):
    pass


class DeliveryError(DigestError):
    def __init__(self, message: str, retryable: bool = True):
        self.retryable = retryable
        super().__init__(message)


class ArchiveConflictError(DigestError):
    pass


# Orchestration
class TaskError(DailyDoseError):
    pass


class RetryExhaustedError(DailyDoseError):
    def __init__(self, attempts: int, last_error: BaseException):
        self.attempts = attempts
        self.last_error = last_error
        super().__init__(f"gave up after {attempts} attempts: {last_error}")


# Survey statistics
class SurveyError(DailyDoseError):
    pass


class InsufficientDataError(SurveyError):
    pass


class UndefinedStatisticError(SurveyError):
    pass


class MissingMidpointError(SurveyError, KeyError):
    def __str__(self):
        return f"no midpoint for category: {self.args[0]}"


class Errors:
    def __init__(self):
        super(Errors, self).__init__

    def generate(num=404, msg="Not found.", essay=""):
        return JSONResponse(
            {"code": num, "reason": msg, "essay": essay},
            status_code=num,
        )

    def basic_http():
        return {
            404: {"description": "Not found"},
            409: {"description": "Conflicts with an existing run or archive entry."},
            422: {"description": "Input failed validation."},
        }
