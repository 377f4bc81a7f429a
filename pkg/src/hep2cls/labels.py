"""Staining-pattern class labels in their fixed order."""

import enum


class ClassLabel(enum.IntEnum):
    H = 1   # homogeneous
    S = 2   # speckled
    N = 3   # nucleolar
    C = 4   # centromere
    NM = 5  # nuclear membrane
    G = 6   # golgi

    @classmethod
    def parse(cls, text):
        """Accept a short code ('NM'), a full name ('Nuclear Membrane',
        'nucleolar') or an index ('5')."""
        key = str(text).strip()
        if key.isdigit():
            return cls(int(key))
        norm = key.replace("_", " ").replace("-", " ").lower()
        for lab in cls:
            if norm == lab.name.lower() or norm == FULL_NAMES[lab].lower():
                return lab
        if norm in _ALIASES:
            return _ALIASES[norm]
        raise ValueError("unknown class label %r" % (text,))


FULL_NAMES = {
    ClassLabel.H: "Homogeneous",
    ClassLabel.S: "Speckled",
    ClassLabel.N: "Nucleolar",
    ClassLabel.C: "Centromere",
    ClassLabel.NM: "Nuclear Membrane",
    ClassLabel.G: "Golgi",
}

# names used by the ICPR-2014 ground-truth files
_ALIASES = {"numem": ClassLabel.NM, "nuclear membrane": ClassLabel.NM}

CLASSES = tuple(int(c) for c in ClassLabel)
N_CLASSES = len(CLASSES)

TAGS = ("positive", "intermediate")


def class_name(label):
    return ClassLabel(int(label)).name
