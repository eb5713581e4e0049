"""Categorized exceptions.

Every failure the pipeline can report derives from :class:`RadiovitError`;
the class name doubles as the machine-readable category printed by the CLI.
"""


class RadiovitError(Exception):
    @property
    def category(self) -> str:
        return type(self).__name__


# dicom ingest
class DicomError(RadiovitError, ValueError):
    pass


class MissingMagic(DicomError):
    pass


class UnsupportedTransferSyntax(DicomError):
    pass


class MissingRequiredTag(DicomError):
    pass


class TruncatedElement(DicomError):
    pass


class MalformedElement(DicomError):
    pass


class LengthMismatch(RadiovitError, ValueError):
    pass


class MalformedLabelsCsv(RadiovitError, ValueError):
    pass


class DuplicateSubjectId(RadiovitError, ValueError):
    pass


# volume prep / augmentation
class NoOrderingKey(RadiovitError, ValueError):
    pass


class InvalidWindow(RadiovitError, ValueError):
    pass


class InconsistentGeometry(RadiovitError, ValueError):
    pass


class NonSquarePlane(RadiovitError, ValueError):
    pass


class BadVolumeFile(RadiovitError, ValueError):
    pass


# model
class IndivisibleDims(RadiovitError, ValueError):
    pass


class ShapeMismatch(RadiovitError, ValueError):
    pass


class NoRecordedForward(RadiovitError, RuntimeError):
    pass


# trainer / checkpoints
class NonFiniteGradient(RadiovitError, FloatingPointError):
    pass


class InsufficientData(RadiovitError, ValueError):
    pass


class BadMagic(RadiovitError, ValueError):
    pass


class VersionMismatch(RadiovitError, ValueError):
    pass


class ManifestShapeMismatch(RadiovitError, ValueError):
    pass


class TruncatedBlob(RadiovitError, ValueError):
    pass


# ensemble / metrics
class EmptyPrediction(RadiovitError, ValueError):
    pass


class MissingModality(RadiovitError, ValueError):
    pass


class SingleClassLabels(RadiovitError, ValueError):
    pass


class SingleClass(RadiovitError, ValueError):
    pass


class MalformedPredictionsCsv(RadiovitError, ValueError):
    pass


# process boundary
class UsageError(RadiovitError):
    pass


class IoError(RadiovitError, OSError):
    pass
