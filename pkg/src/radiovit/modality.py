from enum import Enum


class Modality(str, Enum):
    """The four mpMRI series types; ``code`` is the one-byte cache identifier."""

    T1w = "T1w"
    T1wCE = "T1wCE"
    T2w = "T2w"
    FLAIR = "FLAIR"

    @property
    def code(self) -> int:
        return MODALITIES.index(self)

    @classmethod
    def from_code(cls, code: int) -> "Modality":
        return MODALITIES[code]

    def __str__(self) -> str:
        return self.value


MODALITIES = (Modality.T1w, Modality.T1wCE, Modality.T2w, Modality.FLAIR)
