class ExporterError(Exception):
    pass


class DecodeFailure(ExporterError):
    pass


class EncoderFailure(ExporterError):
    pass


class EmptyText(ExporterError):
    pass


class EndpointFailure(ExporterError):
    pass


class ParseFailure(ExporterError):
    """Raised when an LLM response is not an enumerated list; carries the raw text."""

    def __init__(self, message: str, raw: str):
        super().__init__(message)
        self.raw = raw
