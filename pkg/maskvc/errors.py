class MaskVCError(Exception):
    pass


class AudioFileMissingError(MaskVCError, FileNotFoundError):
    pass


class NonMonoInputError(MaskVCError, ValueError):
    pass


class UnsupportedEncodingError(MaskVCError, ValueError):
    pass


class SampleRateError(MaskVCError, ValueError):
    pass


class ShapeMismatchError(MaskVCError, ValueError):
    pass


class WaveformTooShortError(MaskVCError, ValueError):
    pass


class NormalizationStateError(MaskVCError, ValueError):
    pass


class EmptyCorpusError(MaskVCError, ValueError):
    pass


class NonFiniteError(MaskVCError, FloatingPointError):
    pass


class NonFiniteLossError(NonFiniteError):
    def __init__(self, term, values=None, dump_path=None):
        self.term = term
        self.values = dict(values or {})
        self.dump_path = dump_path
        msg = "non-finite loss term '{0}'".format(term)
        if dump_path:
            msg += " (dump: {0})".format(dump_path)
        super(NonFiniteLossError, self).__init__(msg)


class ConfigMismatchError(MaskVCError):
    pass


class FeatureFileError(MaskVCError, IOError):
    pass


class ConfigError(MaskVCError, ValueError):
    pass


class ZeroVarianceWarning(RuntimeWarning):
    pass


class ShortUtteranceWarning(RuntimeWarning):
    pass


class UtteranceTooShortError(MaskVCError, ValueError):
    pass


class CheckpointFileError(MaskVCError, IOError):
    pass


class InvalidValuesError(MaskVCError, ValueError):
    pass
