"""Exception types shared across the engine.

Parse errors and conversation errors are dialogue content (the server
renders them as in-band payloads); everything else signals a caller bug
or a bad artifact and propagates as a real exception.
"""


class TtmError(Exception):
    """Base class for all engine errors."""


class LoadError(TtmError):
    """A dataset or artifact file could not be ingested."""


class SchemaError(TtmError):
    """A schema violates its invariants (duplicate names, reserved words, ...)."""


class SemanticError(TtmError):
    """A structurally valid request references something that does not exist."""


class ParseError(TtmError):
    """Input text is not in the grammar.

    Carries the longest grammatical prefix and the terminal classes that
    could have followed it, so callers can hint at repairs.
    """

    def __init__(self, message, prefix="", expected=()):
        super().__init__(message)
        self.prefix = prefix
        self.expected = tuple(expected)


class GenerationError(TtmError):
    """A training-data template is malformed or expanded ungrammatically."""

    def __init__(self, message, template_id=None):
        super().__init__(message)
        self.template_id = template_id


class ConversationError(TtmError):
    """A context reference cannot be resolved from the conversation history."""


class EvalError(TtmError):
    """A gold file or evaluation request is unusable (empty, malformed,
    or carrying an ungrammatical reference parse)."""
