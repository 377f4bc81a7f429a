"""Phantom cells and the features that tell them apart.

Generates one phantom per staining pattern and prints the scalar measures
that each class's extractor leans on, then the lengths of the three
feature layouts.  Runs in a few seconds.
"""

from hep2cls import features as F
from hep2cls.data import PhantomSpec, generate_phantom
from hep2cls.labels import ClassLabel

T = 0.45

print("%-4s %5s %5s %5s %7s %7s %7s" % ("cls", "CC", "HN", "EN", "BAR", "IAR", "OAR"))
for lab in ClassLabel:
    cell = generate_phantom(PhantomSpec(lab, seed=3))
    img = F.preprocess(cell.image, 1.0)
    row = [F.compute_scalar(k, img, cell.mask, T) for k in ("CC", "HN", "EN", "BAR", "IAR", "OAR")]
    print("%-4s %5d %5d %5d %7.3f %7.3f %7.3f" % (lab.name, *row))

# homogeneous cells are one blob, speckled ones are full of holes,
# centromere cells break into dozens of dots, nuclear-membrane cells are
# brighter on the rim than inside, golgi staining sits outside the nucleus

cell = generate_phantom(PhantomSpec(ClassLabel.G, contrast="intermediate", seed=3))
vecs = F.extract_all(cell.image, cell.mask)
for kind in ("cs", "texture", "combined"):
    print("%-9s %4d values" % (kind, vecs[kind].values.size))
print("first class-specific slots:", F.layout_names("cs")[:4])
