"""The full command-line pipeline (data, charsets, three stages, inference, evaluation) in one call."""

from __future__ import annotations

from pathlib import Path

from .charset import ScriptId
from .cli import run_command

TINY_DATA = {"image_size": "64", "train": "12", "test": "4", "max_words": "3", "max_len": "3", "scales": "2"}
TINY_MODEL = {"channels": "8", "pooled": "6", "widths": "4,4,8", "lpn_conv1": "4", "lpn_conv2": "4",
              "lpn_fc": "8", "t_max": "6", "min_component": "2",
              "head_sizes": ",".join(f"{s.name}:6/8" for s in ScriptId)}


class PipelineError(RuntimeError):
    pass


def _sets(prefix: str, kv: dict) -> list[str]:
    out = []
    for k, v in kv.items():
        out += ["--set", f"{prefix}{k}={v}"]
    return out


def run_pipeline(work, seed: int = 0, data: dict | None = None, model: dict | None = None,
                 iterations=(4, 2, 2), batch_size: int = 2, target_head: str = "Latin", workers: int = 1) -> Path:
    """Run every CLI command in order under ``work``; raises PipelineError on a non-zero exit."""
    work = Path(work)
    data = TINY_DATA if data is None else data
    model = TINY_MODEL if model is None else model
    d, cs, ck, pred, rep = (work / n for n in ("data", "charsets", "ckpt", "pred", "reports"))
    train = ["--set", f"train.batch_size={batch_size}"]
    steps = [
        ["gen-data", "--out", str(d), "--seed", str(seed)] + _sets("", data),
        ["build-charset", "--data", str(d), "--out", str(cs)],
        ["train", "--stage", "1", "--data", str(d), "--charsets", str(cs), "--out", str(ck / "stage1"),
         "--seed", str(seed), "--iterations", str(iterations[0])] + _sets("model.", model) + train,
        ["train", "--stage", "2", "--data", str(d), "--init", str(ck / "stage1"), "--out", str(ck / "stage2"),
         "--seed", str(seed), "--iterations", str(iterations[1])] + train,
        ["train", "--stage", "3", "--data", str(d), "--init", str(ck / "stage2"), "--out", str(ck / "stage3"),
         "--seed", str(seed), "--iterations", str(iterations[2]), "--target-head", target_head] + train,
        ["--workers", str(workers), "infer", "--checkpoint", str(ck / "stage3"), "--data", str(d),
         "--out", str(pred)],
    ]
    steps += [["eval", "--task", t, "--pred", str(pred), "--data", str(d), "--out", str(rep)]
              for t in ("detection", "joint", "e2e")]
    for argv in steps:
        code = run_command(argv)
        if code != 0:
            raise PipelineError(f"exit {code}: mxspot {' '.join(argv)}")
    return work
