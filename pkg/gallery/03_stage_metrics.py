"""How the two-stage metrics are counted, on a table small enough to check by hand.

Three classes, two samples each.  ``accept`` is what each class's block
said in the first stage; ``final`` is what the resolver picked (0 when no
block accepted).
"""

import numpy as np

from hep2cls.evaluation import OutcomeTable, stage_metrics

true = np.array([1, 1, 2, 2, 3, 3])
accept = np.array([
    [1, 0, 0],  # clean hit
    [1, 1, 0],  # ambiguous, resolved correctly
    [0, 1, 0],  # clean hit
    [1, 1, 0],  # ambiguous, resolved wrongly to class 1
    [0, 0, 0],  # rejected by everyone
    [0, 1, 1],  # ambiguous, resolved correctly
], dtype=bool)
final = np.array([1, 1, 2, 1, 0, 3])

for stage in ("score", "pairwise"):
    m = stage_metrics(OutcomeTable(true, accept, final, classes=(1, 2, 3), second_stage=stage))
    print("second stage:", stage)
    for c in (1, 2, 3):
        print("  class %d  CTP %5.1f  ATP %5.1f  OTP1 %5.1f  OTP %5.1f  OFP1 %5.1f  OFP %5.1f"
              % (c, m.ctp[c], m.atp[c], m.otp1[c], m.otp[c], m.ofp1[c], m.ofp[c]))
    print("  macro F %.3f" % m.f_score)

# With score resolution a sample accepted by its own block always counts
# as found, so OTP equals OTP1; sample 4 still costs class 2 nothing there
# but shows up as a class-1 false positive in both stages.  Under the
# pairwise resolver the same mistake is also a class-2 miss.
