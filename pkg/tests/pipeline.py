"""Full CLI pipeline on the 8-subject fixture, run from the current directory."""

from radiovit.cli import main
from radiovit.modality import MODALITIES

TRAIN_FLAGS = ["--patch", "8", "--embed-dim", "16", "--heads", "4", "--blocks", "1",
               "--epochs", "2", "--val-split", "0.25", "--lr", "1e-3", "--augment", "none"]


def run_pipeline(seed: int = 1) -> list[str]:
    """Run every subcommand with relative paths; returns the produced artifact paths."""
    steps = [
        ["synth", "--out", "data", "--subjects", "8", "--dims", "32x32x32", "--seed", str(seed)],
        ["prep", "--input", "data", "--output", "vols", "--size", "32", "--depth", "32"],
    ]
    for m in MODALITIES:
        steps.append(["train", "--data", "vols", "--labels", "data/train_labels.csv", "--modality", m.value,
                      "--seed", str(seed), "--out", f"{m.value}.v3dc", *TRAIN_FLAGS])
        steps.append(["predict", "--model", f"{m.value}.v3dc", "--data", "vols", "--out", f"{m.value}.csv"])
    preds = ",".join(f"{m.value}.csv" for m in MODALITIES)
    steps += [
        ["ensemble", "--mode", "average", "--preds", preds, "--out", "average.csv"],
        ["ensemble", "--mode", "stack", "--preds", preds, "--labels", "data/train_labels.csv",
         "--stacker", "stacker.json", "--out", "stack.csv"],
        ["eval", "--preds", "average.csv", "--labels", "data/train_labels.csv", "--out-dir", "report"],
    ]
    for argv in steps:
        code = main(argv)
        assert code == 0, f"{argv[0]} exited with {code}"
    artifacts = [f"{m.value}.v3dc" for m in MODALITIES] + [f"{m.value}.csv" for m in MODALITIES]
    artifacts += ["average.csv", "stack.csv", "stacker.json", "report/report.txt", "report/roc.csv", "report/roc.svg"]
    return artifacts
