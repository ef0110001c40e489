"""Reader for conversation-style instruction datasets.

Input is a JSON list, one object per sample::

    {"id": "0001", "image": "images/0001.jpg",
     "conversations": [{"from": "human", "value": "..."},
                       {"from": "gpt", "value": "..."}],
     "task": "vqa"}            # optional

The sample's text is every conversation turn joined in order — the
pooled text modality covers the full exchange, not just responses. The
optional ``task`` field flows into the manifest's task labels; either
every sample carries one or none does.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .errors import DatasetError


@dataclass(frozen=True)
class Sample:
    sample_id: str
    image: str
    text: str
    task: str | None = None


def load_dataset(path: str) -> list[Sample]:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(obj, list) or not obj:
        raise DatasetError(f"{path}: expected a non-empty JSON list of samples")

    samples: list[Sample] = []
    seen: set[str] = set()
    tasks_present = 0
    for pos, entry in enumerate(obj):
        where = f"{path}: sample {pos}"
        if not isinstance(entry, dict):
            raise DatasetError(f"{where} must be an object")
        sample_id = entry.get("id")
        if not isinstance(sample_id, str) or not sample_id:
            raise DatasetError(f"{where} needs a non-empty string 'id'")
        if sample_id in seen:
            raise DatasetError(f"{path}: duplicate sample id {sample_id!r}")
        seen.add(sample_id)
        image = entry.get("image")
        if not isinstance(image, str) or not image:
            raise DatasetError(
                f"{where} ({sample_id!r}) needs an 'image' path",
                hint="text-only samples have no visual tokens to pool",
            )
        turns = entry.get("conversations")
        if not isinstance(turns, list) or not turns:
            raise DatasetError(f"{where} ({sample_id!r}) needs non-empty 'conversations'")
        values: list[str] = []
        for turn in turns:
            if not isinstance(turn, dict) or not isinstance(turn.get("value"), str):
                raise DatasetError(
                    f"{where} ({sample_id!r}): each turn needs a string 'value'"
                )
            values.append(turn["value"])
        task = entry.get("task")
        if task is not None:
            if not isinstance(task, str) or not task:
                raise DatasetError(f"{where} ({sample_id!r}): 'task' must be a string")
            tasks_present += 1
        samples.append(
            Sample(sample_id=sample_id, image=image, text="\n".join(values), task=task)
        )

    if 0 < tasks_present < len(samples):
        raise DatasetError(
            f"{path}: {tasks_present} of {len(samples)} samples carry a 'task' label",
            hint="label every sample or none, so the manifest stays consistent",
        )
    return samples


def task_labels(samples: list[Sample]) -> list[str]:
    """Per-sample task labels, or [] when the dataset is unlabeled."""
    if samples and samples[0].task is not None:
        return [s.task for s in samples]  # type: ignore[misc]
    return []
