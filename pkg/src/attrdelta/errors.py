"""Exception and warning taxonomy shared across the toolkit."""


class AttrDeltaError(Exception):
    """Base class for all toolkit errors."""


class EmptyPrompt(AttrDeltaError):
    """Prompt is empty after whitespace normalization."""


class PromptTooLong(AttrDeltaError):
    """Prompt token count exceeds the encoder's budget."""


class SubjectNotFound(AttrDeltaError):
    """Requested subject word / occurrence does not exist in the prompt."""


class AmbiguousSubword(AttrDeltaError):
    """A word match does not align with token boundaries."""


class EncoderMismatch(AttrDeltaError):
    """Encoder identity or budget incompatible with the requested operation."""


class DimensionMismatch(AttrDeltaError):
    """Embedding width differs from what a backbone or delta expects."""


class ShapeMismatch(AttrDeltaError):
    """Sample-space arrays disagree in shape."""


class TimestepOutOfRange(AttrDeltaError):
    """Timestep outside (0, T]."""


class SpanOutOfRange(AttrDeltaError):
    """Subject span indices invalid for the prompt it is applied to."""


class NoValidPairs(AttrDeltaError):
    """A contrastive prompt set expanded to zero usable pairs."""


class AdapterUnavailable(AttrDeltaError):
    """A metric or model adapter is not configured in this environment."""


class BadMagic(AttrDeltaError):
    """Delta file does not start with the expected magic bytes."""


class UnsupportedVersion(AttrDeltaError):
    """Delta file version not understood by this build."""


class DimMismatchOnLoad(AttrDeltaError):
    """Delta file payload length disagrees with its header."""


class DelayExceedsSteps(UserWarning):
    """A delta's delay is at least the step count, so it is never applied."""


class CausalOrderWarning(UserWarning):
    """Attribute words follow the subject noun; causal encoders ignore them."""
