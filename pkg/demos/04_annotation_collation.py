"""Gold labels from three annotators: only unanimous, non-abstaining marks survive."""

from otut.evaluation import AnnotationRecord, collate_unanimous

marks = {
    "p1": ["NE", "NE", "NE"],
    "p2": ["OT", "NE", "OT"],
    "p3": ["UT", "UT", "abstain"],
    "p4": ["UT", "UT", "UT"],
    "p5": ["OT", "OT"],  # third annotator never got to it
}
records = [AnnotationRecord(pid, f"ann{i}", m) for pid, ms in marks.items() for i, m in enumerate(ms)]

col = collate_unanimous(records, annotators_required=3)
print("gold:", col.gold)
print("excluded:", col.excluded)
print(col.counts(), col.exclusion_counts())
