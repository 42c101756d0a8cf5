"""Per-class precision, recall and F1 from published test-set confusion matrices."""
from radnet.metrics import ConfusionMatrix, EvalReport

binary = ConfusionMatrix([[198, 2], [12, 188]])
print(EvalReport.from_confusion(binary, ["non-Covid", "COVID-19"]).to_text())

three = ConfusionMatrix([[195, 2, 3], [0, 94, 6], [2, 10, 88]])
report = EvalReport.from_confusion(three, ["Covid", "Normal", "Pneumonia"])
print(report.to_text())

# pooled TP / (TP + 0.5 (FP + FN)) is the same number as plain accuracy
print("standard", report.accuracy, "pooled", report.paper_accuracy)
